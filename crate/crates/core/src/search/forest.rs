//! A bagged regression forest used as the search surrogate.

use rand::seq::index::sample;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Fraction of features considered at each split.
    pub feature_fraction: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { trees: 50, max_depth: 20, min_samples_split: 3, feature_fraction: 5.0 / 6.0 }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

struct Builder<'a, R: Rng + ?Sized> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: ForestParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let n = rows.len();
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n as f64;
        let index = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if n < self.params.min_samples_split || depth >= self.params.max_depth {
            return index;
        }
        let first = self.y[rows[0]];
        if rows.iter().all(|&r| self.y[r] == first) {
            return index;
        }
        let dims = self.x[0].len();
        let take = ((dims as f64 * self.params.feature_fraction).ceil() as usize).clamp(1, dims);
        let features = sample(self.rng, dims, take);

        // Best split by squared-error reduction.
        let mut best: Option<(f64, usize, f64)> = None;
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mut order: Vec<usize> = rows.to_vec();
        for feature in features.iter() {
            order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.y[order[k]];
                let (a, b) = (self.x[order[k]][feature], self.x[order[k + 1]][feature]);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let right_sum = total - left_sum;
                // Maximizing this is equivalent to minimizing the children's SSE.
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, feature, a + (b - a) / 2.0));
                }
            }
        }
        let Some((_, feature, threshold)) = best else { return index };
        let split = partition(rows, |&r| self.x[r][feature] <= threshold);
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[index] = Node::Split { feature, threshold, left, right };
        index
    }
}

fn partition<T, F: Fn(&T) -> bool>(items: &mut [T], pred: F) -> usize {
    let mut next = 0;
    for i in 0..items.len() {
        if pred(&items[i]) {
            items.swap(i, next);
            next += 1;
        }
    }
    next
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
}

impl RandomForest {
    /// Fits one tree per bootstrap resample of the rows. `x` must be
    /// non-empty with equal-length rows.
    pub fn fit<R: Rng + ?Sized>(x: &[Vec<f64>], y: &[f64], params: ForestParams, rng: &mut R) -> Self {
        assert!(!x.is_empty() && x.len() == y.len(), "forest needs matching, non-empty data");
        let n = x.len();
        let mut trees = Vec::with_capacity(params.trees);
        for _ in 0..params.trees.max(1) {
            let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = Builder { x, y, params, rng, nodes: Vec::new() };
            if x[0].is_empty() {
                let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n as f64;
                builder.nodes.push(Node::Leaf(mean));
            } else {
                builder.build(&mut rows, 0);
            }
            trees.push(Tree { nodes: builder.nodes });
        }
        Self { trees }
    }

    /// Per-tree predictions.
    pub fn predictions(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    /// Mean and standard deviation across trees.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let p = self.predictions(x);
        let n = p.len() as f64;
        let mean = p.iter().sum::<f64>() / n;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fits_a_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 200.0, rng.random()]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] < 0.5 { 1.0 } else { 5.0 }).collect();
        let f = RandomForest::fit(&x, &y, ForestParams::default(), &mut rng);
        let (lo, _) = f.predict(&[0.2, 0.5]);
        let (hi, _) = f.predict(&[0.8, 0.5]);
        assert!((lo - 1.0).abs() < 0.2, "{lo}");
        assert!((hi - 5.0).abs() < 0.2, "{hi}");
    }

    #[test]
    fn spread_grows_away_from_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 100.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[0]).collect();
        let f = RandomForest::fit(&x, &y, ForestParams::default(), &mut rng);
        let (_, inside) = f.predict(&[0.1]);
        let (_, edge) = f.predict(&[0.39]);
        assert!(inside <= edge + 1e-12 || inside < 0.01);
        let single = RandomForest::fit(&[vec![0.5]], &[2.0], ForestParams::default(), &mut rng);
        assert_eq!(single.predict(&[0.0]), (2.0, 0.0));
    }
}
