//! Cost intervals, target histograms, coverage accounting and the 1-D
//! earth mover's distance between histograms.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::model::CostMetric;
use crate::profiler::ProfileRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("bad benchmark spec: {0}")]
    BadSpec(String),
    #[error("histograms have different intervals")]
    IntervalMismatch,
}

/// Contiguous half-open intervals `[l_j, u_j)` covering `[min, max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostIntervals {
    edges: Vec<f64>,
}

impl CostIntervals {
    /// `n` equal-width intervals over `[min, max)`.
    pub fn uniform(min: f64, max: f64, n: usize) -> Result<Self, DistributionError> {
        if n == 0 {
            return Err(DistributionError::BadSpec("interval count must be at least 1".into()));
        }
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(DistributionError::BadSpec(format!("bad range [{min}, {max})")));
        }
        let width = max - min;
        let mut edges: Vec<f64> = (0..=n).map(|j| min + width * j as f64 / n as f64).collect();
        edges[n] = max;
        Ok(Self { edges })
    }

    /// Intervals from explicit, strictly increasing edges.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self, DistributionError> {
        if edges.len() < 2 {
            return Err(DistributionError::BadSpec("need at least two edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DistributionError::BadSpec("edges must be finite and strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn range_max(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// `(l_j, u_j)` of interval `j`.
    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.edges[j], self.edges[j + 1])
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        let (l, u) = self.bounds(j);
        l + (u - l) / 2.0
    }

    /// Index of the interval containing `cost`, or `None` outside
    /// `[range_min, range_max)`.
    pub fn bin(&self, cost: f64) -> Option<usize> {
        if !(cost >= self.range_min() && cost < self.range_max()) {
            return None;
        }
        let above = self.edges.partition_point(|e| *e <= cost);
        Some(above - 1)
    }
}

/// Free-function form of [`CostIntervals::bin`].
pub fn bin(intervals: &CostIntervals, cost: f64) -> Option<usize> {
    intervals.bin(cost)
}

/// Query counts per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostHistogram {
    pub intervals: CostIntervals,
    pub counts: Vec<u64>,
}

impl CostHistogram {
    pub fn empty(intervals: CostIntervals) -> Self {
        let counts = vec![0; intervals.len()];
        Self { intervals, counts }
    }

    pub fn from_counts(intervals: CostIntervals, counts: Vec<u64>) -> Result<Self, DistributionError> {
        if counts.len() != intervals.len() {
            return Err(DistributionError::BadSpec(format!(
                "{} counts for {} intervals",
                counts.len(),
                intervals.len()
            )));
        }
        Ok(Self { intervals, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one observation; returns the bin it landed in.
    pub fn add(&mut self, cost: f64) -> Option<usize> {
        let j = self.intervals.bin(cost)?;
        self.counts[j] += 1;
        Some(j)
    }

    /// Histogram of `costs` over the same intervals.
    pub fn of_costs(intervals: &CostIntervals, costs: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::empty(intervals.clone());
        for c in costs {
            h.add(c);
        }
        h
    }

    /// Element-wise sum.
    pub fn plus(&self, other: &CostHistogram) -> Result<CostHistogram, DistributionError> {
        if self.intervals != other.intervals {
            return Err(DistributionError::IntervalMismatch);
        }
        let counts = self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect();
        Ok(CostHistogram { intervals: self.intervals.clone(), counts })
    }

    /// Probability mass per bin. An all-zero histogram puts all mass on the
    /// lowest bin.
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            let mut mass = vec![0.0; self.counts.len()];
            mass[0] = 1.0;
            return mass;
        }
        self.counts.iter().map(|c| *c as f64 / total as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionShape {
    Uniform,
    Normal { mean: f64, stddev: f64 },
    /// One non-negative weight per interval, one per line.
    File { path: PathBuf },
    /// Per-interval weights given inline.
    Weights { weights: Vec<f64> },
}

/// Target cost distribution: range, query count, interval count and shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub cost_type: CostMetric,
    pub range: [f64; 2],
    pub num_queries: u64,
    pub num_intervals: usize,
    pub shape: DistributionShape,
}

impl BenchmarkSpec {
    pub fn intervals(&self) -> Result<CostIntervals, DistributionError> {
        CostIntervals::uniform(self.range[0], self.range[1], self.num_intervals)
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        self.intervals()?;
        if (self.num_queries as u128) < self.num_intervals as u128 {
            return Err(DistributionError::BadSpec(format!(
                "num_queries {} must be at least num_intervals {}",
                self.num_queries, self.num_intervals
            )));
        }
        Ok(())
    }
}

/// Parses one non-negative real weight per non-blank line (`#` starts a
/// comment).
pub fn parse_weights(text: &str) -> Result<Vec<f64>, DistributionError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            let w: f64 = l.parse().map_err(|_| DistributionError::BadSpec(format!("bad weight `{l}`")))?;
            if !w.is_finite() || w < 0.0 {
                return Err(DistributionError::BadSpec(format!("weight `{l}` must be non-negative")));
            }
            Ok(w)
        })
        .collect()
}

/// Scales `weights` to integer counts summing to exactly `total` using
/// largest-remainder rounding; ties go to the lower index.
pub fn largest_remainder(weights: &[f64], total: u64) -> Result<Vec<u64>, DistributionError> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || !sum.is_finite() || sum <= 0.0 {
        return Err(DistributionError::BadSpec("weights must have a positive finite sum".into()));
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut remaining = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[j] += 1;
        remaining -= 1;
    }
    Ok(counts)
}

/// Builds the target histogram for a benchmark.
pub fn build_target(spec: &BenchmarkSpec) -> Result<CostHistogram, DistributionError> {
    spec.validate()?;
    let intervals = spec.intervals()?;
    let n = intervals.len();
    let total = spec.num_queries;
    let counts = match &spec.shape {
        DistributionShape::Uniform => {
            let base = total / n as u64;
            let extra = (total % n as u64) as usize;
            (0..n).map(|j| base + u64::from(j < extra)).collect()
        }
        DistributionShape::Normal { mean, stddev } => {
            if !(stddev.is_finite() && *stddev > 0.0 && mean.is_finite()) {
                return Err(DistributionError::BadSpec("normal needs finite mean and stddev > 0".into()));
            }
            let normal = Normal::new(*mean, *stddev).map_err(|e| DistributionError::BadSpec(e.to_string()))?;
            let mass: Vec<f64> = (0..n)
                .map(|j| {
                    let (l, u) = intervals.bounds(j);
                    (normal.cdf(u) - normal.cdf(l)).max(0.0)
                })
                .collect();
            largest_remainder(&mass, total)?
        }
        DistributionShape::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| DistributionError::BadSpec(format!("{}: {e}", path.display())))?;
            weighted_counts(&parse_weights(&text)?, n, total)?
        }
        DistributionShape::Weights { weights } => {
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(DistributionError::BadSpec("weights must be non-negative".into()));
            }
            weighted_counts(weights, n, total)?
        }
    };
    CostHistogram::from_counts(intervals, counts)
}

fn weighted_counts(weights: &[f64], n: usize, total: u64) -> Result<Vec<u64>, DistributionError> {
    if weights.len() != n {
        return Err(DistributionError::BadSpec(format!("{} weights for {n} intervals", weights.len())));
    }
    largest_remainder(weights, total)
}

/// Number of observed costs per interval across all profiles; costs outside
/// the range are ignored.
pub fn coverage(profiles: &[ProfileRecord], intervals: &CostIntervals) -> Vec<u64> {
    let mut counts = vec![0u64; intervals.len()];
    for record in profiles {
        for &c in &record.costs {
            if let Some(j) = intervals.bin(c) {
                counts[j] += 1;
            }
        }
    }
    counts
}

/// Earth mover's distance between two histograms on the same intervals.
///
/// Each histogram is normalized to unit mass and placed at bin midpoints;
/// the distance is in cost units. An all-zero histogram counts as all mass on
/// the lowest bin.
pub fn wasserstein(a: &CostHistogram, b: &CostHistogram) -> Result<f64, DistributionError> {
    if a.intervals != b.intervals {
        return Err(DistributionError::IntervalMismatch);
    }
    let pa = a.normalized();
    let pb = b.normalized();
    let mut cdf_a = 0.0;
    let mut cdf_b = 0.0;
    let mut distance = 0.0;
    for j in 0..pa.len().saturating_sub(1) {
        cdf_a += pa[j];
        cdf_b += pb[j];
        let gap = a.intervals.midpoint(j + 1) - a.intervals.midpoint(j);
        distance += (cdf_a - cdf_b).abs() * gap;
    }
    Ok(distance)
}

/// Interval with the largest positive `target - current` gap outside `skip`,
/// lowest index on ties.
pub fn largest_gap(
    target: &CostHistogram,
    current: &CostHistogram,
    skip: &BTreeSet<usize>,
) -> Option<(usize, u64)> {
    let mut best: Option<(usize, u64)> = None;
    for j in 0..target.counts.len() {
        if skip.contains(&j) {
            continue;
        }
        let gap = target.counts[j].saturating_sub(current.counts[j]);
        if gap > 0 && best.is_none_or(|(_, g)| gap > g) {
            best = Some((j, gap));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n_queries: u64, n: usize, shape: DistributionShape) -> BenchmarkSpec {
        BenchmarkSpec {
            name: "t".into(),
            cost_type: CostMetric::PlanCost,
            range: [0.0, 10_000.0],
            num_queries: n_queries,
            num_intervals: n,
            shape,
        }
    }

    fn hist(range_max: f64, counts: Vec<u64>) -> CostHistogram {
        let iv = CostIntervals::uniform(0.0, range_max, counts.len()).unwrap();
        CostHistogram::from_counts(iv, counts).unwrap()
    }

    #[test]
    fn uniform_target() {
        let t = build_target(&spec(1000, 10, DistributionShape::Uniform)).unwrap();
        assert_eq!(t.counts, vec![100; 10]);
        let t = build_target(&spec(7, 3, DistributionShape::Uniform)).unwrap();
        assert_eq!(t.counts, vec![3, 2, 2]);
    }

    /// Midpoint-rule integration of the normal density with 10,000 points per
    /// bin, followed by an independent largest-remainder pass.
    fn normal_oracle(mean: f64, sd: f64, lo: f64, hi: f64, n: usize, total: u64) -> Vec<u64> {
        let width = (hi - lo) / n as f64;
        let pdf = |x: f64| (-(x - mean).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let steps = 10_000;
        let mass: Vec<f64> = (0..n)
            .map(|j| {
                let a = lo + j as f64 * width;
                let h = width / steps as f64;
                (0..steps).map(|i| pdf(a + (i as f64 + 0.5) * h) * h).sum()
            })
            .collect();
        let z: f64 = mass.iter().sum();
        let quotas: Vec<f64> = mass.iter().map(|m| m / z * total as f64).collect();
        let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
        let mut left = total - counts.iter().sum::<u64>();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).partial_cmp(&(quotas[a] - quotas[a].floor())).unwrap().then(a.cmp(&b)));
        for j in idx {
            if left == 0 {
                break;
            }
            counts[j] += 1;
            left -= 1;
        }
        counts
    }

    #[test]
    fn normal_target_matches_integration_oracle() {
        let t = build_target(&spec(1000, 10, DistributionShape::Normal { mean: 5000.0, stddev: 1500.0 })).unwrap();
        let oracle = normal_oracle(5000.0, 1500.0, 0.0, 10_000.0, 10, 1000);
        assert_eq!(t.counts, oracle);
        // Frozen from the oracle above.
        assert_eq!(t.counts, vec![3, 19, 69, 161, 248, 248, 161, 69, 19, 3]);
        assert_eq!(t.total(), 1000);
        for j in 0..10 {
            assert!(t.counts[j].abs_diff(t.counts[9 - j]) <= 1);
        }
    }

    #[test]
    fn weights_target() {
        let t = build_target(&spec(10, 3, DistributionShape::Weights { weights: vec![1.0, 1.0, 2.0] })).unwrap();
        assert_eq!(t.counts, vec![3, 2, 5]);
        assert!(build_target(&spec(10, 3, DistributionShape::Weights { weights: vec![1.0, 1.0] })).is_err());
        assert!(build_target(&spec(10, 3, DistributionShape::Weights { weights: vec![0.0; 3] })).is_err());
        assert!(build_target(&spec(2, 3, DistributionShape::Uniform)).is_err());
    }

    #[test]
    fn file_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.txt");
        std::fs::write(&path, "# weights\n0.5\n0.25\n\n0.25\n").unwrap();
        let t = build_target(&spec(8, 3, DistributionShape::File { path })).unwrap();
        assert_eq!(t.counts, vec![4, 2, 2]);
        assert!(parse_weights("1\n-2\n").is_err());
    }

    #[test]
    fn bin_edges() {
        let iv = CostIntervals::uniform(0.0, 10_000.0, 10).unwrap();
        assert_eq!(iv.bin(0.0), Some(0));
        assert_eq!(iv.bin(10_000.0), None);
        assert_eq!(iv.bin(-0.1), None);
        assert_eq!(iv.bin(f64::NAN), None);
        // Brute-force scan of the bounds.
        let scan = |c: f64| (0..iv.len()).find(|&j| iv.bounds(j).0 <= c && c < iv.bounds(j).1);
        assert_eq!(iv.bin(6500.0), scan(6500.0));
        assert_eq!(iv.bin(6500.0), Some(6));
        assert_eq!(iv.bin(999.999), Some(0));
        assert_eq!(iv.bin(1000.0), Some(1));
    }

    #[test]
    fn coverage_counts() {
        let iv = CostIntervals::uniform(0.0, 10_000.0, 10).unwrap();
        assert_eq!(coverage(&[], &iv), vec![0; 10]);
        let rec = ProfileRecord::from_costs("t", vec![100.0, 150.0, 9999.0]);
        let c = coverage(&[rec], &iv);
        assert_eq!(c[0], 2);
        assert_eq!(c[9], 1);
        assert_eq!(c.iter().sum::<u64>(), 3);
        let rec = ProfileRecord::from_costs("t", vec![-5.0, 10_000.0]);
        assert_eq!(coverage(&[rec], &iv), vec![0; 10]);
    }

    #[test]
    fn wasserstein_examples() {
        let a = hist(200.0, vec![1, 0]);
        let b = hist(200.0, vec![0, 1]);
        assert_eq!(wasserstein(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein(&a, &b).unwrap(), 100.0);
        let c = hist(200.0, vec![2, 0]);
        let d = hist(200.0, vec![1, 1]);
        assert_eq!(wasserstein(&c, &d).unwrap(), 50.0);
        let e = hist(300.0, vec![1, 1]);
        assert_eq!(wasserstein(&c, &e), Err(DistributionError::IntervalMismatch));
        // Empty histogram behaves like all mass on the lowest bin.
        let empty = hist(200.0, vec![0, 0]);
        assert_eq!(wasserstein(&empty, &b).unwrap(), 100.0);
        assert_eq!(wasserstein(&empty, &a).unwrap(), 0.0);
    }

    #[test]
    fn largest_gap_examples() {
        let none = BTreeSet::new();
        assert_eq!(largest_gap(&hist(10.0, vec![5, 5]), &hist(10.0, vec![5, 5]), &none), None);
        let t = hist(10.0, vec![10, 3]);
        let c = hist(10.0, vec![2, 3]);
        assert_eq!(largest_gap(&t, &c, &none), Some((0, 8)));
        assert_eq!(largest_gap(&t, &c, &BTreeSet::from([0])), None);
        assert_eq!(largest_gap(&hist(10.0, vec![4, 4]), &hist(10.0, vec![0, 0]), &none), Some((0, 4)));
    }

    fn counts_strategy(n: usize) -> impl Strategy<Value = Vec<u64>> {
        proptest::collection::vec(0u64..20, n)
    }

    proptest! {
        #[test]
        fn wasserstein_is_a_metric(
            (a, b, c) in (1usize..8).prop_flat_map(|n| (counts_strategy(n), counts_strategy(n), counts_strategy(n)))
        ) {
            let (a, b, c) = (hist(800.0, a), hist(800.0, b), hist(800.0, c));
            let ab = wasserstein(&a, &b).unwrap();
            let ba = wasserstein(&b, &a).unwrap();
            let bc = wasserstein(&b, &c).unwrap();
            let ac = wasserstein(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
            if a.normalized() == b.normalized() {
                prop_assert_eq!(ab, 0.0);
            }
        }

        #[test]
        fn targets_sum_to_n(n_queries in 1u64..5000, n in 1usize..40, mean in 0.0f64..10000.0, sd in 10.0f64..5000.0,
                            w in proptest::collection::vec(0.0f64..10.0, 40)) {
            prop_assume!(n_queries >= n as u64);
            let mut weights = w[..n].to_vec();
            weights[0] += 0.5;
            for shape in [DistributionShape::Uniform, DistributionShape::Normal { mean, stddev: sd },
                          DistributionShape::Weights { weights }] {
                let t = build_target(&spec(n_queries, n, shape)).unwrap();
                prop_assert_eq!(t.total(), n_queries);
                prop_assert_eq!(t.counts.len(), n);
            }
        }

        #[test]
        fn coverage_bounded_by_in_range(costs in proptest::collection::vec(-2000.0f64..12000.0, 0..60)) {
            let iv = CostIntervals::uniform(0.0, 10_000.0, 10).unwrap();
            let in_range = costs.iter().filter(|c| **c >= 0.0 && **c < 10_000.0).count() as u64;
            let rec = ProfileRecord::from_costs("t", costs);
            prop_assert_eq!(coverage(&[rec], &iv).iter().sum::<u64>(), in_range);
        }
    }
}
