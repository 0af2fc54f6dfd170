//! Fills the remaining gaps of the target histogram by searching predicate
//! values template by template.

pub mod bo;
pub mod forest;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bo::{bayesian_optimize, BoEvaluation, BoOptions, BoRun};

use crate::distribution::{largest_gap, wasserstein, CostHistogram};
use crate::model::{Bindings, SqlTemplate};
use crate::profiler::{space_size, CostOracle, OracleError, ProfileRecord};
use crate::refinery::closeness;
use crate::rng::stage_rng;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("utility ratio of an empty batch is undefined")]
    EmptyInput,
    #[error("templates and profiles are misaligned: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("search monitor failed: {0}")]
    Monitor(String),
}

/// 0 inside `[lo, hi]`, otherwise one minus the best multiplicative
/// closeness to either bound.
pub fn objective(c: f64, lo: f64, hi: f64) -> f64 {
    if lo <= c && c <= hi {
        return 0.0;
    }
    if c <= 0.0 {
        return 1.0;
    }
    // Non-positive bounds have no meaningful ratio and contribute nothing.
    let ratio = |b: f64| if b > 0.0 { (c / b).min(b / c) } else { 0.0 };
    1.0 - ratio(lo).max(ratio(hi))
}

/// Fraction of `new_costs` that land in a bin still below target when
/// processed in order.
pub fn utility_ratio(new_costs: &[f64], target: &CostHistogram, current: &CostHistogram) -> Result<f64, SearchError> {
    if new_costs.is_empty() {
        return Err(SearchError::EmptyInput);
    }
    let mut counts = current.counts.clone();
    let mut filled = 0usize;
    for &c in new_costs {
        if let Some(j) = target.intervals.bin(c) {
            if counts[j] < target.counts[j] {
                counts[j] += 1;
                filled += 1;
            }
        }
    }
    Ok(filled as f64 / new_costs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// BO budget per run as a multiple of the current gap.
    pub budget_factor: u64,
    pub sample_size: usize,
    pub utility_threshold: f64,
    pub max_failures: u32,
    /// Templates whose variety factor is below this are not searched.
    pub min_variety: f64,
    pub bo: BoOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget_factor: 5,
            sample_size: 10,
            utility_threshold: 0.05,
            max_failures: 5,
            min_variety: 0.1,
            bo: BoOptions::default(),
        }
    }
}

/// A query accepted into the workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadQuery {
    pub template_id: String,
    pub bindings: Bindings,
    pub sql_text: String,
    pub cost: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub bad: BTreeSet<(usize, String)>,
    pub skip: BTreeSet<usize>,
    /// Unexplored bindings per template.
    pub remaining: BTreeMap<String, u64>,
    /// Consecutive rounds without progress per interval.
    pub failures: BTreeMap<usize, u32>,
    pub queries: Vec<WorkloadQuery>,
    /// Workload counts per bin.
    pub current: Vec<u64>,
    pub rounds: u64,
    pub runs: u64,
    pub evaluations: u64,
    /// Evaluations that landed in a full bin or outside the range.
    pub surplus: u64,
}

impl SearchState {
    /// Starts from `seed` queries, keeping at most `target[j]` per bin and
    /// dropping duplicate SQL.
    pub fn new(templates: &[SqlTemplate], profiles: &[ProfileRecord], target: &CostHistogram, seed: Vec<WorkloadQuery>) -> Self {
        let mut state = SearchState { current: vec![0; target.counts.len()], ..Default::default() };
        for (t, p) in templates.iter().zip(profiles) {
            state.remaining.insert(t.id.clone(), space_size(t).saturating_sub(p.len() as u64));
        }
        let mut seen = BTreeSet::new();
        for q in seed {
            state.offer(q, target, &mut seen);
        }
        state
    }

    fn offer(&mut self, q: WorkloadQuery, target: &CostHistogram, seen: &mut BTreeSet<String>) -> bool {
        if self.current[q.bin] >= target.counts[q.bin] || !seen.insert(q.sql_text.clone()) {
            return false;
        }
        self.current[q.bin] += 1;
        self.queries.push(q);
        true
    }

    pub fn histogram(&self, target: &CostHistogram) -> CostHistogram {
        CostHistogram::from_counts(target.intervals.clone(), self.current.clone()).expect("state tracks every bin")
    }

    pub fn distance(&self, target: &CostHistogram) -> f64 {
        wasserstein(&self.histogram(target), target).unwrap_or(f64::NAN)
    }
}

/// One line of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub elapsed_ms: u64,
    pub round: u64,
    pub event: String,
    pub interval: usize,
    pub delta: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub evaluations: usize,
    pub hits: usize,
    pub accepted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<f64>,
    pub distance: f64,
}

/// Observes the search after every BO run and skip decision.
pub trait SearchMonitor {
    fn record(
        &mut self,
        trace: &TraceRecord,
        run: Option<&BoRun>,
        state: &SearchState,
        profiles: &[ProfileRecord],
    ) -> Result<(), SearchError>;

    /// Called at the start of every round. A state saved here resumes
    /// identically; one saved mid-round would redraw that round's sample.
    fn round_boundary(&mut self, _state: &SearchState, _profiles: &[ProfileRecord]) -> Result<(), SearchError> {
        Ok(())
    }

    /// Checked before every round; `true` ends the search early.
    fn should_stop(&self, _state: &SearchState) -> bool {
        false
    }
}

/// Monitor that records nothing and never stops.
pub struct Silent;

impl SearchMonitor for Silent {
    fn record(&mut self, _: &TraceRecord, _: Option<&BoRun>, _: &SearchState, _: &[ProfileRecord]) -> Result<(), SearchError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchEnd {
    /// No gap remains outside the skipped intervals.
    Converged,
    /// The monitor asked to stop.
    Stopped,
}

/// Draws up to `k` distinct indices with probability proportional to
/// `weights`, falling back to uniform weights when all are zero.
fn weighted_sample<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    if pool.iter().all(|&(_, w)| w <= 0.0) {
        for p in &mut pool {
            p.1 = 1.0;
        }
    }
    pool.retain(|&(_, w)| w > 0.0);
    let mut out = Vec::new();
    while out.len() < k && !pool.is_empty() {
        let total: f64 = pool.iter().map(|&(_, w)| w).sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, &(_, w)) in pool.iter().enumerate() {
            if r < w {
                pick = i;
                break;
            }
            r -= w;
        }
        out.push(pool.remove(pick).0);
    }
    out
}

/// Runs the gap-filling loop until every interval is at target or skipped.
///
/// `profiles[i]` belongs to `templates[i]` and grows with every evaluation.
/// Random draws come from streams derived from `seed` and the state's
/// counters, so a search resumed from a saved state continues identically.
#[allow(clippy::too_many_arguments)]
pub fn fill_distribution(
    state: &mut SearchState,
    templates: &[SqlTemplate],
    profiles: &mut [ProfileRecord],
    target: &CostHistogram,
    oracle: &mut dyn CostOracle,
    options: &SearchOptions,
    seed: u64,
    monitor: &mut dyn SearchMonitor,
) -> Result<SearchEnd, SearchError> {
    if templates.len() != profiles.len() {
        return Err(SearchError::Misaligned(format!("{} templates, {} profiles", templates.len(), profiles.len())));
    }
    let start = Instant::now();
    let intervals = &target.intervals;
    let mut seen: BTreeSet<String> = state.queries.iter().map(|q| q.sql_text.clone()).collect();
    loop {
        monitor.round_boundary(state, profiles)?;
        let current = state.histogram(target);
        let Some((j, delta)) = largest_gap(target, &current, &state.skip) else {
            return Ok(SearchEnd::Converged);
        };
        if monitor.should_stop(state) {
            return Ok(SearchEnd::Stopped);
        }
        state.rounds += 1;
        let round = state.rounds;
        let bounds = intervals.bounds(j);

        let mut candidates: Vec<(usize, f64)> = Vec::new();
        for (i, t) in templates.iter().enumerate() {
            let Ok(s) = closeness(&profiles[i], bounds) else { continue };
            if state.bad.contains(&(j, t.id.clone())) {
                continue;
            }
            if state.remaining.get(&t.id).copied().unwrap_or(0) < options.budget_factor * delta {
                continue;
            }
            if profiles[i].variety() < options.min_variety {
                continue;
            }
            candidates.push((i, s));
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if candidates.is_empty() {
            state.skip.insert(j);
            let trace = TraceRecord {
                elapsed_ms: start.elapsed().as_millis() as u64,
                round,
                event: "skip".into(),
                interval: j,
                delta,
                template_id: None,
                evaluations: 0,
                hits: 0,
                accepted: 0,
                utility: None,
                distance: state.distance(target),
            };
            monitor.record(&trace, None, state, profiles)?;
            continue;
        }
        let mut select_rng = stage_rng(seed, &format!("select/{round}"));
        let weights: Vec<f64> = candidates.iter().map(|&(_, s)| s).collect();
        let selected: Vec<usize> =
            weighted_sample(&weights, options.sample_size, &mut select_rng).into_iter().map(|k| candidates[k].0).collect();

        let before = state.current[j];
        for i in selected {
            let gap = target.counts[j].saturating_sub(state.current[j]);
            if gap == 0 {
                break;
            }
            let template = &templates[i];
            state.runs += 1;
            let mut bo_rng = stage_rng(seed, &format!("bo/{}", state.runs));
            let budget = (options.budget_factor * gap) as usize;
            let run = bayesian_optimize(
                template,
                intervals,
                j,
                budget,
                gap as usize,
                &profiles[i],
                oracle,
                &options.bo,
                &mut bo_rng,
            )?;
            let costs = run.costs();
            let utility = if costs.is_empty() { 0.0 } else { utility_ratio(&costs, target, &state.histogram(target))? };

            let mut hits = 0;
            let mut accepted = 0;
            for e in &run.evaluations {
                let Some(cost) = e.cost else { continue };
                profiles[i].push(e.bindings.clone(), cost);
                let Some(bin) = intervals.bin(cost) else {
                    state.surplus += 1;
                    continue;
                };
                if bin == j {
                    hits += 1;
                }
                let q = WorkloadQuery {
                    template_id: template.id.clone(),
                    bindings: e.bindings.clone(),
                    sql_text: e.sql_text.clone(),
                    cost,
                    bin,
                };
                if state.offer(q, target, &mut seen) {
                    accepted += 1;
                } else {
                    state.surplus += 1;
                }
            }
            state.evaluations += run.used() as u64;
            if let Some(r) = state.remaining.get_mut(&template.id) {
                *r = r.saturating_sub(run.used() as u64);
            }
            if utility < options.utility_threshold {
                state.bad.insert((j, template.id.clone()));
            }
            let trace = TraceRecord {
                elapsed_ms: start.elapsed().as_millis() as u64,
                round,
                event: "bo_run".into(),
                interval: j,
                delta: gap,
                template_id: Some(template.id.clone()),
                evaluations: run.used(),
                hits,
                accepted,
                utility: Some(utility),
                distance: state.distance(target),
            };
            monitor.record(&trace, Some(&run), state, profiles)?;
        }
        if state.current[j] > before {
            state.failures.remove(&j);
        } else {
            let f = state.failures.entry(j).or_insert(0);
            *f += 1;
            if *f >= options.max_failures {
                state.skip.insert(j);
            }
        }
    }
}
