//! Latin-hypercube profiling of templates against a cost oracle.

mod oracle;
mod postgres;
mod synthetic;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{instantiate, Bindings, SqlTemplate, Value, ValueDomain};

pub use self::postgres::{parse_explain_json, PostgresOracle};
pub use oracle::{lint_sql, CostOracle, OracleError};
pub use synthetic::{Surface, SurfaceRule, SyntheticOracle};

/// Saturation point for [`space_size`].
pub const SPACE_SIZE_CEILING: u64 = 1_000_000_000_000_000;

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error("cannot sample from an empty list of domains")]
    EmptyDomain,
    #[error("profiling budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Observed costs of one template, in sampling order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub template_id: String,
    pub costs: Vec<f64>,
    pub bindings_log: Vec<Bindings>,
}

impl ProfileRecord {
    pub fn new(template_id: impl Into<String>) -> Self {
        Self { template_id: template_id.into(), costs: vec![], bindings_log: vec![] }
    }

    /// A record with no binding information, for tests and reports.
    pub fn from_costs(template_id: impl Into<String>, costs: Vec<f64>) -> Self {
        let bindings_log = vec![Bindings::new(); costs.len()];
        Self { template_id: template_id.into(), costs, bindings_log }
    }

    pub fn push(&mut self, bindings: Bindings, cost: f64) {
        self.bindings_log.push(bindings);
        self.costs.push(cost);
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// Fraction of distinct cost values among all observations.
    pub fn variety(&self) -> f64 {
        variety(&self.costs)
    }
}

/// `|unique(costs)| / |costs|`, or 0 for an empty slice.
pub fn variety(costs: &[f64]) -> f64 {
    if costs.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<f64> = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup_by(|a, b| a.total_cmp(b).is_eq());
    sorted.len() as f64 / costs.len() as f64
}

/// `n` points in `[0,1)^dims`, one per stratum `[k/n, (k+1)/n)` in every
/// dimension, with strata permuted independently per dimension.
pub fn lhs_unit<R: Rng + ?Sized>(dims: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::with_capacity(dims); n];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..dims {
        order.shuffle(rng);
        for (point, &stratum) in points.iter_mut().zip(&order) {
            let u = (stratum as f64 + rng.random::<f64>()) / n as f64;
            point.push(u.min(next_down(1.0)));
        }
    }
    points
}

fn next_down(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Latin-hypercube sample of `n` binding vectors over `domains`.
pub fn lhs_sample<R: Rng + ?Sized>(
    domains: &[&ValueDomain],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Value>>, ProfilerError> {
    if domains.is_empty() {
        return Err(ProfilerError::EmptyDomain);
    }
    if n == 0 {
        return Err(ProfilerError::ZeroBudget);
    }
    Ok(lhs_unit(domains.len(), n, rng)
        .into_iter()
        .map(|point| point.iter().zip(domains).map(|(u, d)| d.from_unit(*u)).collect())
        .collect())
}

/// Per-template profiling budget: 15% of the workload size spread evenly
/// over templates, at least 10.
pub fn profiling_budget(num_queries: u64, num_templates: usize, fraction: f64) -> usize {
    if num_templates == 0 {
        return 10;
    }
    let share = (fraction * num_queries as f64 / num_templates as f64).ceil() as usize;
    share.max(10)
}

/// Draws `budget` bindings, instantiates and evaluates them. Failed
/// evaluations use up budget and are skipped.
pub fn profile<R: Rng + ?Sized>(
    template: &SqlTemplate,
    oracle: &mut dyn CostOracle,
    budget: usize,
    rng: &mut R,
) -> Result<ProfileRecord, ProfilerError> {
    if budget == 0 {
        return Err(ProfilerError::ZeroBudget);
    }
    let samples: Vec<Bindings> = if template.placeholders.is_empty() {
        vec![Bindings::new(); budget]
    } else {
        lhs_sample(&template.domains(), budget, rng)?
            .into_iter()
            .map(|values| template.bind(values))
            .collect()
    };
    let mut record = ProfileRecord::new(&template.id);
    for bindings in samples {
        let query = match instantiate(template, &bindings) {
            Ok(q) => q,
            Err(e) => {
                log::warn!("template {}: {e}", template.id);
                continue;
            }
        };
        match oracle.evaluate(template, &query) {
            Ok(cost) => record.push(bindings, cost.value),
            Err(OracleError::QueryFailed(msg)) => log::warn!("template {}: evaluation failed: {msg}", template.id),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(record)
}

/// Number of distinct bindings of `template`, saturating at
/// [`SPACE_SIZE_CEILING`].
pub fn space_size(template: &SqlTemplate) -> u64 {
    template
        .domains()
        .iter()
        .fold(1u64, |acc, d| acc.saturating_mul(d.cardinality()))
        .min(SPACE_SIZE_CEILING)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ColumnRef, Placeholder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn template(domains: Vec<ValueDomain>) -> SqlTemplate {
        let names: Vec<String> = (1..=domains.len()).map(|i| format!("p_{i}")).collect();
        let sql = format!(
            "SELECT * FROM t WHERE 1 = 1{}",
            names.iter().map(|n| format!(" AND c = {{{n}}}")).collect::<String>()
        );
        let placeholders = names
            .iter()
            .zip(domains)
            .map(|(n, domain)| Placeholder { name: n.clone(), column: ColumnRef::new("t", "c"), domain })
            .collect();
        SqlTemplate::new("t", sql, placeholders).unwrap()
    }

    #[test]
    fn lhs_one_per_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = ValueDomain::real_range(0.0, 10.0, 1000).unwrap();
        let samples = lhs_sample(&[&d], 5, &mut rng).unwrap();
        let mut strata: Vec<usize> = samples
            .iter()
            .map(|s| match s[0] {
                Value::Real(v) => (v / 2.0).floor() as usize,
                _ => unreachable!(),
            })
            .collect();
        strata.sort_unstable();
        assert_eq!(strata, vec![0, 1, 2, 3, 4]);

        let one = lhs_sample(&[&d], 1, &mut rng).unwrap();
        assert!(d.contains(&one[0][0]));
        assert!(matches!(lhs_sample(&[], 3, &mut rng), Err(ProfilerError::EmptyDomain)));
    }

    #[test]
    fn lhs_integer_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = ValueDomain::int_range(0, 99).unwrap();
        let samples = lhs_sample(&[&d], 10, &mut rng).unwrap();
        let mut strata: Vec<i64> = samples
            .iter()
            .map(|s| match s[0] {
                Value::Int(v) => v / 10,
                _ => unreachable!(),
            })
            .collect();
        strata.sort_unstable();
        assert_eq!(strata, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn space_sizes() {
        let cat = ValueDomain::categorical((0..7).map(Value::Int).collect()).unwrap();
        assert_eq!(space_size(&template(vec![cat])), 7);
        assert_eq!(space_size(&template(vec![])), 1);
        let a = ValueDomain::int_range(1, 10).unwrap();
        let b = ValueDomain::int_range(1, 5).unwrap();
        let t = template(vec![a.clone(), b.clone()]);
        // Enumeration oracle.
        let mut count = 0;
        for _ in 1..=10 {
            for _ in 1..=5 {
                count += 1;
            }
        }
        assert_eq!(space_size(&t), count);
        let huge = ValueDomain::int_range(i64::MIN / 2, i64::MAX / 2).unwrap();
        assert_eq!(space_size(&template(vec![huge.clone(), huge])), SPACE_SIZE_CEILING);
        let real = ValueDomain::real_range(0.0, 1.0, 321).unwrap();
        assert_eq!(space_size(&template(vec![real])), 321);
    }

    #[test]
    fn budgets() {
        assert_eq!(profiling_budget(1000, 1, 0.15), 150);
        assert_eq!(profiling_budget(1000, 4, 0.15), 38);
        assert_eq!(profiling_budget(50, 10, 0.15), 10);
    }

    #[test]
    fn variety_counts_distinct() {
        assert_eq!(variety(&[1.0, 1.0, 2.0, 3.0]), 0.75);
        assert_eq!(variety(&[]), 0.0);
    }
}
