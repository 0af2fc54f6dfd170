//! Bayesian optimization over one template's predicate space.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::forest::{ForestParams, RandomForest};
use super::objective;
use crate::distribution::CostIntervals;
use crate::model::{instantiate, Bindings, SqlTemplate};
use crate::profiler::{lhs_unit, CostOracle, OracleError, ProfileRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoOptions {
    pub trees: usize,
    pub random_candidates: usize,
    pub local_candidates: usize,
    /// Standard deviation of incumbent perturbations in unit space.
    pub local_scale: f64,
    pub max_initial: usize,
    pub warm_start: usize,
    /// Largest number of points suggested per surrogate fit.
    pub max_batch: usize,
    /// Training rows kept for each fit: the best half plus the most recent.
    pub max_training: usize,
    /// Uniform random proposals instead of the surrogate.
    pub naive: bool,
}

impl Default for BoOptions {
    fn default() -> Self {
        Self {
            trees: 50,
            random_candidates: 500,
            local_candidates: 50,
            local_scale: 0.1,
            max_initial: 10,
            warm_start: 10,
            max_batch: 50,
            max_training: 500,
            naive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoEvaluation {
    pub bindings: Bindings,
    pub sql_text: String,
    /// `None` when the oracle could not cost the query.
    pub cost: Option<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRun {
    pub template_id: String,
    pub interval: usize,
    pub bounds: (f64, f64),
    pub budget: usize,
    pub warm_started: usize,
    pub evaluations: Vec<BoEvaluation>,
}

impl BoRun {
    pub fn used(&self) -> usize {
        self.evaluations.len()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.evaluations.iter().filter_map(|e| e.cost).collect()
    }
}

struct Observation {
    x: Vec<f64>,
    y: f64,
}

struct Candidate {
    x: Vec<f64>,
    bindings: Bindings,
    sql_text: String,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Snaps a unit-space point onto the domains and re-encodes it.
fn decode(template: &SqlTemplate, u: &[f64]) -> Option<Candidate> {
    let values = template.placeholders.iter().zip(u).map(|(p, &x)| p.domain.from_unit(x)).collect();
    let bindings = template.bind(values);
    let x = encode(template, &bindings)?;
    let sql_text = instantiate(template, &bindings).ok()?.sql_text;
    Some(Candidate { x, bindings, sql_text })
}

fn encode(template: &SqlTemplate, bindings: &Bindings) -> Option<Vec<f64>> {
    template.placeholders.iter().map(|p| p.domain.to_unit(bindings.get(&p.name)?)).collect()
}

fn expected_improvement(best: f64, mean: f64, sd: f64) -> f64 {
    if sd <= 1e-12 {
        return (best - mean).max(0.0);
    }
    let n = Normal::standard();
    let z = (best - mean) / sd;
    (best - mean) * n.cdf(z) + sd * n.pdf(z)
}

/// Proposes up to `count` unseen candidates.
fn suggest<R: Rng + ?Sized>(
    template: &SqlTemplate,
    observations: &[Observation],
    seen: &BTreeSet<String>,
    count: usize,
    options: &BoOptions,
    rng: &mut R,
) -> Vec<Candidate> {
    let dims = template.placeholders.len();
    let mut pool: Vec<Candidate> = Vec::new();
    let mut fresh = BTreeSet::new();
    let mut push = |c: Candidate, pool: &mut Vec<Candidate>| {
        if !seen.contains(&c.sql_text) && fresh.insert(c.sql_text.clone()) {
            pool.push(c);
        }
    };
    if options.naive || observations.is_empty() {
        for _ in 0..options.random_candidates.max(count) {
            let u: Vec<f64> = (0..dims).map(|_| rng.random()).collect();
            if let Some(c) = decode(template, &u) {
                push(c, &mut pool);
            }
            if pool.len() == count {
                break;
            }
        }
        return pool;
    }

    for _ in 0..options.random_candidates {
        let u: Vec<f64> = (0..dims).map(|_| rng.random()).collect();
        if let Some(c) = decode(template, &u) {
            push(c, &mut pool);
        }
    }
    let mut ranked: Vec<usize> = (0..observations.len()).collect();
    ranked.sort_by(|&a, &b| observations[a].y.total_cmp(&observations[b].y));
    let incumbents = &ranked[..ranked.len().min(5)];
    for _ in 0..options.local_candidates {
        let base = &observations[incumbents[rng.random_range(0..incumbents.len())]].x;
        let u: Vec<f64> = base.iter().map(|&v| (v + options.local_scale * gaussian(rng)).clamp(0.0, 1.0)).collect();
        if let Some(c) = decode(template, &u) {
            push(c, &mut pool);
        }
    }
    if pool.is_empty() {
        return pool;
    }

    // Keep the best-scoring half and the most recent rows.
    let mut rows: Vec<usize> = if observations.len() > options.max_training {
        let half = options.max_training / 2;
        let mut keep: BTreeSet<usize> = ranked[..half].iter().copied().collect();
        let mut i = observations.len();
        while keep.len() < options.max_training && i > 0 {
            i -= 1;
            keep.insert(i);
        }
        keep.into_iter().collect()
    } else {
        (0..observations.len()).collect()
    };
    rows.sort_unstable();
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| observations[i].x.clone()).collect();
    let y: Vec<f64> = rows.iter().map(|&i| observations[i].y).collect();
    let params = ForestParams { trees: options.trees, ..ForestParams::default() };
    let forest = RandomForest::fit(&x, &y, params, rng);

    // Shuffle first so the stable sort breaks ties randomly.
    pool.shuffle(rng);
    let best = observations.iter().map(|o| o.y).fold(f64::INFINITY, f64::min);
    let mut scored: Vec<(f64, f64, Candidate)> = pool
        .into_iter()
        .map(|c| {
            let preds = forest.predictions(&c.x);
            let n = preds.len() as f64;
            let mean = preds.iter().sum::<f64>() / n;
            let score = if best <= 0.0 {
                // Nothing improves on a hit; prefer points the trees agree are hits.
                preds.iter().filter(|&&p| p <= 1e-12).count() as f64 / n
            } else {
                let sd = (preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
                expected_improvement(best, mean, sd)
            };
            (score, mean, c)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
    scored.into_iter().take(count).map(|(_, _, c)| c).collect()
}

/// Searches bindings of `template` whose cost falls in interval `j`.
///
/// Stops after `budget` evaluations or once `hit_target` in-interval costs
/// were observed. `prior` holds earlier evaluations of the same template;
/// its best entries warm-start the surrogate and none of its bindings is
/// evaluated again.
#[allow(clippy::too_many_arguments)]
pub fn bayesian_optimize<R: Rng + ?Sized>(
    template: &SqlTemplate,
    intervals: &CostIntervals,
    j: usize,
    budget: usize,
    hit_target: usize,
    prior: &ProfileRecord,
    oracle: &mut dyn CostOracle,
    options: &BoOptions,
    rng: &mut R,
) -> Result<BoRun, OracleError> {
    let bounds = intervals.bounds(j);
    let mut run = BoRun {
        template_id: template.id.clone(),
        interval: j,
        bounds,
        budget,
        warm_started: 0,
        evaluations: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    let mut warm: Vec<Observation> = Vec::new();
    for (bindings, &cost) in prior.bindings_log.iter().zip(&prior.costs) {
        if let Ok(q) = instantiate(template, bindings) {
            if seen.insert(q.sql_text) {
                if let Some(x) = encode(template, bindings) {
                    warm.push(Observation { x, y: objective(cost, bounds.0, bounds.1) });
                }
            }
        }
    }
    let mut observations: Vec<Observation> = Vec::new();
    if !options.naive {
        // Stable sort keeps profile order among equal objectives.
        warm.sort_by(|a, b| a.y.total_cmp(&b.y));
        warm.truncate(options.warm_start);
        run.warm_started = warm.len();
        observations = warm;
    }

    let mut hits = 0usize;
    let mut evaluate = |c: Candidate,
                        run: &mut BoRun,
                        observations: &mut Vec<Observation>,
                        seen: &mut BTreeSet<String>|
     -> Result<usize, OracleError> {
        seen.insert(c.sql_text.clone());
        let query = instantiate(template, &c.bindings).map_err(|e| OracleError::QueryFailed(e.to_string()))?;
        let cost = match oracle.evaluate(template, &query) {
            Ok(v) => Some(v.value),
            Err(OracleError::QueryFailed(msg)) => {
                log::warn!("template {}: evaluation failed: {msg}", template.id);
                None
            }
            Err(e) => return Err(e),
        };
        let y = cost.map_or(1.0, |c| objective(c, bounds.0, bounds.1));
        if cost.is_some_and(|c| intervals.bin(c) == Some(j)) {
            hits += 1;
        }
        observations.push(Observation { x: c.x.clone(), y });
        run.evaluations.push(BoEvaluation { bindings: c.bindings, sql_text: c.sql_text, cost, objective: y });
        Ok(hits)
    };

    if budget == 0 {
        return Ok(run);
    }
    let dims = template.placeholders.len();
    if !options.naive {
        let initial = (budget / 5).min(options.max_initial).max(1);
        for u in lhs_unit(dims, initial, rng) {
            if let Some(c) = decode(template, &u) {
                if !seen.contains(&c.sql_text) {
                    evaluate(c, &mut run, &mut observations, &mut seen)?;
                }
            }
        }
    }
    let batch = (budget / 10).clamp(1, options.max_batch.max(1));
    let mut found = 0;
    while run.used() < budget && found < hit_target {
        let count = batch.min(budget - run.used());
        let picked = suggest(template, &observations, &seen, count, options, rng);
        if picked.is_empty() {
            break;
        }
        for c in picked {
            found = evaluate(c, &mut run, &mut observations, &mut seen)?;
            if found >= hit_target {
                break;
            }
        }
    }
    Ok(run)
}
