//! Cost-aware template refinement: find cost intervals the template pool
//! under-covers, ask the provider to steer the closest templates toward
//! them, and keep only refinements that help.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{summarize_catalog, SchemaCatalog};
use crate::distribution::{coverage, wasserstein, CostHistogram, CostIntervals};
use crate::forge::{parse_template, HistoryEntry, LlmProvider, RefineRequest};
use crate::model::SqlTemplate;
use crate::profiler::{profile, variety, CostOracle, OracleError, ProfileRecord, ProfilerError};

/// Distance decreases smaller than this fraction of a bin width count as
/// no change.
pub const DISTANCE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("template {0} has no observed costs")]
    EmptyProfile(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Mean distance from the costs to the closed interval `[lo, hi]`.
pub fn mean_distance(costs: &[f64], interval: (f64, f64)) -> f64 {
    let (lo, hi) = interval;
    let total: f64 = costs
        .iter()
        .map(|&c| {
            if c < lo {
                lo - c
            } else if c > hi {
                c - hi
            } else {
                0.0
            }
        })
        .sum();
    total / costs.len() as f64
}

/// `v / (1 + d)`: cost variety over one plus mean distance to the interval.
pub fn closeness(record: &ProfileRecord, interval: (f64, f64)) -> Result<f64, RefineError> {
    if record.costs.is_empty() {
        return Err(RefineError::EmptyProfile(record.template_id.clone()));
    }
    Ok(variety(&record.costs) / (1.0 + mean_distance(&record.costs, interval)))
}

/// Keep a refinement if one of its costs lands in a target interval, or if
/// adding its costs moves the current histogram strictly closer to the
/// target.
pub fn prune_check(
    new_costs: &[f64],
    targets: &BTreeSet<usize>,
    current: &CostHistogram,
    target: &CostHistogram,
) -> bool {
    let intervals = &current.intervals;
    if new_costs.iter().any(|&c| intervals.bin(c).is_some_and(|j| targets.contains(&j))) {
        return true;
    }
    let Ok(before) = wasserstein(current, target) else { return false };
    let mut after_hist = current.clone();
    for &c in new_costs {
        after_hist.add(c);
    }
    let Ok(after) = wasserstein(&after_hist, target) else { return false };
    let width = (intervals.range_max() - intervals.range_min()) / intervals.len() as f64;
    after < before - DISTANCE_EPSILON * width
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementPhase {
    pub tau: f64,
    pub k: usize,
    pub m: usize,
    pub use_history: bool,
}

impl RefinementPhase {
    pub fn defaults() -> [RefinementPhase; 2] {
        [
            RefinementPhase { tau: 0.2, k: 3, m: 3, use_history: false },
            RefinementPhase { tau: 0.1, k: 5, m: 5, use_history: true },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub phases: Vec<RefinementPhase>,
    /// Profiling budget for each refinement.
    pub profile_budget: usize,
    /// Most recent history entries included in a refinement request.
    pub history_cap: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { phases: RefinementPhase::defaults().to_vec(), profile_budget: 10, history_cap: 5 }
    }
}

/// Past accepted refinements per interval index.
pub type RefinementHistory = BTreeMap<usize, Vec<HistoryEntry>>;

/// Audit record for one refinement request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineAttempt {
    pub phase: usize,
    pub iteration: usize,
    pub interval: usize,
    pub interval_bounds: (f64, f64),
    pub parent_id: String,
    pub child_id: Option<String>,
    pub accepted: bool,
    pub outcome: String,
    pub history_entries: usize,
    pub distance_before: f64,
    pub distance_after: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RefineOutput {
    pub templates: Vec<SqlTemplate>,
    pub profiles: Vec<ProfileRecord>,
    pub history: RefinementHistory,
    pub attempts: Vec<RefineAttempt>,
}

fn coverage_histogram(profiles: &[ProfileRecord], intervals: &CostIntervals) -> CostHistogram {
    CostHistogram::from_counts(intervals.clone(), coverage(profiles, intervals)).expect("coverage has one count per bin")
}

fn distance(profiles: &[ProfileRecord], target: &CostHistogram) -> f64 {
    wasserstein(&coverage_histogram(profiles, &target.intervals), target).unwrap_or(f64::NAN)
}

fn child_id(parent: &str, pool: &[SqlTemplate]) -> String {
    let mut n = 1;
    loop {
        let id = format!("{parent}_r{n}");
        if !pool.iter().any(|t| t.id == id) {
            return id;
        }
        n += 1;
    }
}

/// Runs the refinement phases. The seed pool is never shrunk; accepted
/// refinements are appended with lineage to their parent.
#[allow(clippy::too_many_arguments)]
pub fn refine<R: Rng + ?Sized>(
    templates: Vec<SqlTemplate>,
    profiles: Vec<ProfileRecord>,
    target: &CostHistogram,
    catalog: &SchemaCatalog,
    provider: &mut dyn LlmProvider,
    oracle: &mut dyn CostOracle,
    options: &RefineOptions,
    rng: &mut R,
) -> Result<RefineOutput, RefineError> {
    let intervals = target.intervals.clone();
    let summary = summarize_catalog(catalog);
    let mut out = RefineOutput { templates, profiles, ..Default::default() };
    for (phase_index, phase) in options.phases.iter().enumerate() {
        for iteration in 1..=phase.k {
            let cov = coverage(&out.profiles, &intervals);
            let low: BTreeSet<usize> = (0..intervals.len())
                .filter(|&j| (cov[j] as f64) < phase.tau * target.counts[j] as f64)
                .collect();
            if low.is_empty() {
                break;
            }
            for &j in &low {
                let bounds = intervals.bounds(j);
                let mut scored: Vec<(f64, usize)> = out
                    .profiles
                    .iter()
                    .enumerate()
                    .filter_map(|(i, p)| closeness(p, bounds).ok().map(|s| (s, i)))
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let parents: Vec<usize> = scored.iter().take(phase.m).map(|&(_, i)| i).collect();
                for parent_index in parents {
                    let parent = out.templates[parent_index].clone();
                    let parent_costs = out.profiles[parent_index].costs.clone();
                    let history: &[HistoryEntry] = match (phase.use_history, out.history.get(&j)) {
                        (true, Some(h)) => &h[h.len().saturating_sub(options.history_cap)..],
                        _ => &[],
                    };
                    let history_entries = history.len();
                    let before = distance(&out.profiles, target);
                    let mut attempt = RefineAttempt {
                        phase: phase_index + 1,
                        iteration,
                        interval: j,
                        interval_bounds: bounds,
                        parent_id: parent.id.clone(),
                        child_id: None,
                        accepted: false,
                        outcome: String::new(),
                        history_entries,
                        distance_before: before,
                        distance_after: before,
                    };
                    let request = RefineRequest {
                        parent_sql: &parent.sql_text,
                        costs: &parent_costs,
                        interval: bounds,
                        summary: &summary,
                        history,
                    };
                    let text = match provider.refine_template(&request) {
                        Ok(t) => t,
                        Err(e) => {
                            attempt.outcome = format!("provider failure: {e}");
                            out.attempts.push(attempt);
                            continue;
                        }
                    };
                    let id = child_id(&parent.id, &out.templates);
                    let mut child = match parse_template(&text, &id, catalog, None) {
                        Ok(t) => t.with_lineage(&parent.id),
                        Err(e) => {
                            attempt.outcome = format!("unparsable refinement: {e}");
                            out.attempts.push(attempt);
                            continue;
                        }
                    };
                    child.spec_id = parent.spec_id.clone();
                    let record = match profile(&child, oracle, options.profile_budget, rng) {
                        Ok(r) => r,
                        Err(ProfilerError::Oracle(e @ OracleError::Unavailable(_))) => return Err(e.into()),
                        Err(e) => {
                            attempt.outcome = format!("profiling failed: {e}");
                            out.attempts.push(attempt);
                            continue;
                        }
                    };
                    attempt.child_id = Some(id);
                    let current = coverage_histogram(&out.profiles, &intervals);
                    if record.costs.is_empty() {
                        attempt.outcome = "no costs observed".into();
                    } else if prune_check(&record.costs, &low, &current, target) {
                        attempt.accepted = true;
                        attempt.outcome = "accepted".into();
                        out.history
                            .entry(j)
                            .or_default()
                            .push(HistoryEntry { sql_text: child.sql_text.clone(), costs: record.costs.clone() });
                        out.templates.push(child);
                        out.profiles.push(record);
                        attempt.distance_after = distance(&out.profiles, target);
                    } else {
                        attempt.outcome = "pruned".into();
                    }
                    out.attempts.push(attempt);
                }
            }
        }
    }
    Ok(out)
}
