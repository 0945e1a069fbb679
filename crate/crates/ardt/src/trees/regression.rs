//! Vector-leaf regression trees and a gradient-boosted ensemble trainer.
//!
//! Trees are grown CART-style: greedy axis-aligned splits minimizing the
//! total squared error summed over every output coordinate, leaf values equal
//! to the mean target of the samples they receive. Split candidates are the
//! midpoints between consecutive distinct sorted feature values; ties on gain
//! break toward the lowest feature index, then the lowest threshold, so a fit
//! is reproducible across platforms.
//!
//! The booster fits one vector-leaf tree per round on the residuals of the
//! running prediction. With shrinkage in `(0, 1]` and full-sample rounds the
//! per-round training MSE never increases.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One node of a regression tree. Same routing rule as the token trees:
/// `x[feature] >= threshold` goes right.
#[derive(Debug, Clone, PartialEq)]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Squared-error reduction this split achieved at fit time.
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: Vec<f64>,
    },
}

/// Regression tree mapping an `input_dim` vector to an `output_dim` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<RegNode>,
    input_dim: usize,
    output_dim: usize,
}

impl RegressionTree {
    pub(crate) fn from_parts(nodes: Vec<RegNode>, input_dim: usize, output_dim: usize) -> Self {
        RegressionTree { nodes, input_dim, output_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn nodes(&self) -> &[RegNode] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, RegNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[RegNode], idx: usize) -> usize {
            match &nodes[idx] {
                RegNode::Leaf { .. } => 0,
                RegNode::Split { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }

    /// The leaf vector reached by `x`.
    pub fn leaf_value(&self, x: &[f64]) -> Result<&[f64]> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                RegNode::Leaf { value } => return Ok(value),
                RegNode::Split { feature, threshold, left, right, .. } => {
                    idx = if x[*feature] >= *threshold { *right } else { *left };
                }
            }
        }
    }
}

/// Gradient-boosted ensemble of vector-leaf regression trees.
///
/// Prediction is `base + shrinkage * sum over trees of the leaf reached`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEnsemble {
    pub(crate) base: Vec<f64>,
    pub(crate) shrinkage: f64,
    pub(crate) trees: Vec<RegressionTree>,
    pub(crate) input_dim: usize,
}

impl RegressionEnsemble {
    pub fn new(base: Vec<f64>, shrinkage: f64, trees: Vec<RegressionTree>, input_dim: usize) -> Result<Self> {
        let output_dim = base.len();
        for t in &trees {
            if t.output_dim != output_dim || t.input_dim != input_dim {
                return Err(Error::DimensionMismatch { expected: output_dim, got: t.output_dim });
            }
        }
        Ok(RegressionEnsemble { base, shrinkage, trees, input_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.base.len()
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// Total node count across all trees, the ensemble's parameter count.
    pub fn num_nodes(&self) -> usize {
        self.trees.iter().map(|t| t.num_nodes()).sum()
    }

    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if out.len() != self.base.len() {
            return Err(Error::DimensionMismatch { expected: self.base.len(), got: out.len() });
        }
        out.copy_from_slice(&self.base);
        for tree in &self.trees {
            let leaf = tree.leaf_value(x)?;
            for (o, v) in out.iter_mut().zip(leaf) {
                *o += self.shrinkage * v;
            }
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.base.len()];
        self.predict_into(x, &mut out)?;
        Ok(out)
    }
}

/// Growth limits for a single regression tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// Maximum split depth; 0 forces a single leaf.
    pub max_depth: usize,
    /// Minimum samples each child of a split must keep.
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 6, min_samples_leaf: 1 }
    }
}

/// Boosting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParams {
    pub rounds: usize,
    /// Shrinkage (learning rate) in `(0, 1]`.
    pub shrinkage: f64,
    pub tree: TreeParams,
    /// Fraction of rows drawn (without replacement) per round, in `(0, 1]`.
    /// At 1.0 the fit is deterministic regardless of seed and training MSE is
    /// non-increasing per round.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            rounds: 20,
            shrinkage: 0.3,
            tree: TreeParams::default(),
            subsample: 1.0,
            seed: 17,
        }
    }
}

/// A trained ensemble plus its per-round training MSE trace.
#[derive(Debug, Clone)]
pub struct BoostFit {
    pub ensemble: RegressionEnsemble,
    /// Mean squared error per sample per output coordinate after each round.
    pub train_mse: Vec<f64>,
}

fn check_dataset(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(usize, usize)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let in_dim = x[0].len();
    let out_dim = y[0].len();
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::InvalidParameter("zero-dimensional samples".into()));
    }
    for row in x {
        if row.len() != in_dim {
            return Err(Error::DimensionMismatch { expected: in_dim, got: row.len() });
        }
    }
    for row in y {
        if row.len() != out_dim {
            return Err(Error::DimensionMismatch { expected: out_dim, got: row.len() });
        }
    }
    Ok((in_dim, out_dim))
}

/// Mean target and total squared error around it for `indices`.
fn node_stats(y: &[Vec<f64>], indices: &[usize], out_dim: usize) -> (Vec<f64>, f64) {
    let n = indices.len() as f64;
    let mut sum = vec![0.0; out_dim];
    let mut sqsum = 0.0;
    for &i in indices {
        for (d, v) in y[i].iter().enumerate() {
            sum[d] += v;
            sqsum += v * v;
        }
    }
    let sse = (sqsum - sum.iter().map(|s| s * s).sum::<f64>() / n).max(0.0);
    let mean = sum.iter().map(|s| s / n).collect();
    (mean, sse)
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    children_sse: f64,
}

fn best_split(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    indices: &[usize],
    min_samples_leaf: usize,
    scratch: &mut Vec<usize>,
) -> Option<BestSplit> {
    let n = indices.len();
    if n < 2 * min_samples_leaf || n < 2 {
        return None;
    }
    let in_dim = x[indices[0]].len();
    let out_dim = y[indices[0]].len();

    let mut total_sum = vec![0.0; out_dim];
    let mut total_sq = 0.0;
    for &i in indices {
        for (d, v) in y[i].iter().enumerate() {
            total_sum[d] += v;
            total_sq += v * v;
        }
    }

    let mut best: Option<BestSplit> = None;
    let mut left_sum = vec![0.0; out_dim];
    for feature in 0..in_dim {
        scratch.clear();
        scratch.extend_from_slice(indices);
        scratch.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));

        left_sum.iter_mut().for_each(|v| *v = 0.0);
        let mut left_sq = 0.0;
        for pos in 0..n - 1 {
            let i = scratch[pos];
            for (d, v) in y[i].iter().enumerate() {
                left_sum[d] += v;
                left_sq += v * v;
            }
            let lo = x[i][feature];
            let hi = x[scratch[pos + 1]][feature];
            if lo == hi {
                continue;
            }
            let n_left = pos + 1;
            let n_right = n - n_left;
            if n_left < min_samples_leaf || n_right < min_samples_leaf {
                continue;
            }
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold <= lo {
                // Adjacent floats: fall back to the upper value so the left
                // child keeps `lo` and the right child starts at `hi`.
                threshold = hi;
            }
            let mut left_mean_sq = 0.0;
            let mut right_mean_sq = 0.0;
            for (d, ls) in left_sum.iter().enumerate() {
                left_mean_sq += ls * ls;
                let rs = total_sum[d] - ls;
                right_mean_sq += rs * rs;
            }
            let sse_left = (left_sq - left_mean_sq / n_left as f64).max(0.0);
            let sse_right = ((total_sq - left_sq) - right_mean_sq / n_right as f64).max(0.0);
            let children_sse = sse_left + sse_right;
            // Strict improvement keeps the lowest feature index and the
            // lowest threshold on ties.
            if best.as_ref().map_or(true, |b| children_sse < b.children_sse) {
                best = Some(BestSplit { feature, threshold, children_sse });
            }
        }
    }
    best
}

fn grow(
    nodes: &mut Vec<RegNode>,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    indices: &[usize],
    depth: usize,
    params: &TreeParams,
    scratch: &mut Vec<usize>,
) -> usize {
    let out_dim = y[indices[0]].len();
    let (mean, parent_sse) = node_stats(y, indices, out_dim);

    let split = if depth < params.max_depth {
        best_split(x, y, indices, params.min_samples_leaf, scratch)
    } else {
        None
    };
    let split = match split {
        Some(s) if parent_sse - s.children_sse > 0.0 => s,
        _ => {
            nodes.push(RegNode::Leaf { value: mean });
            return nodes.len() - 1;
        }
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| x[i][split.feature] < split.threshold);

    let slot = nodes.len();
    nodes.push(RegNode::Leaf { value: Vec::new() }); // placeholder
    let left = grow(nodes, x, y, &left_idx, depth + 1, params, scratch);
    let right = grow(nodes, x, y, &right_idx, depth + 1, params, scratch);
    nodes[slot] = RegNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        gain: parent_sse - split.children_sse,
        left,
        right,
    };
    slot
}

/// Fits a single regression tree on `(x, y)`.
pub fn fit_regression_tree(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    params: &TreeParams,
) -> Result<RegressionTree> {
    let (in_dim, out_dim) = check_dataset(x, y)?;
    if params.min_samples_leaf == 0 {
        return Err(Error::InvalidParameter("min_samples_leaf must be >= 1".into()));
    }
    let indices: Vec<usize> = (0..x.len()).collect();
    let mut nodes = Vec::new();
    let mut scratch = Vec::with_capacity(x.len());
    grow(&mut nodes, x, y, &indices, 0, params, &mut scratch);
    Ok(RegressionTree::from_parts(nodes, in_dim, out_dim))
}

/// Fits a boosted ensemble: base prediction is the mean target, each round
/// fits one tree to the residuals of the running prediction.
pub fn fit_ensemble(x: &[Vec<f64>], y: &[Vec<f64>], params: &BoostParams) -> Result<BoostFit> {
    let (in_dim, out_dim) = check_dataset(x, y)?;
    if params.rounds == 0 {
        return Err(Error::InvalidParameter("rounds must be >= 1".into()));
    }
    if !(params.shrinkage > 0.0 && params.shrinkage <= 1.0) {
        return Err(Error::InvalidParameter("shrinkage must be in (0, 1]".into()));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::InvalidParameter("subsample must be in (0, 1]".into()));
    }

    let n = x.len();
    let mut base = vec![0.0; out_dim];
    for row in y {
        for (d, v) in row.iter().enumerate() {
            base[d] += v;
        }
    }
    base.iter_mut().for_each(|v| *v /= n as f64);

    let mut preds: Vec<Vec<f64>> = vec![base.clone(); n];
    let mut residuals: Vec<Vec<f64>> = vec![vec![0.0; out_dim]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let all_rows: Vec<usize> = (0..n).collect();

    let mut trees = Vec::with_capacity(params.rounds);
    let mut train_mse = Vec::with_capacity(params.rounds);
    let mut scratch = Vec::with_capacity(n);

    for _ in 0..params.rounds {
        for i in 0..n {
            for d in 0..out_dim {
                residuals[i][d] = y[i][d] - preds[i][d];
            }
        }
        let rows = if params.subsample < 1.0 {
            let take = ((n as f64 * params.subsample).floor() as usize).max(1);
            let mut pool = all_rows.clone();
            pool.shuffle(&mut rng);
            pool.truncate(take);
            pool.sort_unstable();
            pool
        } else {
            all_rows.clone()
        };

        let mut nodes = Vec::new();
        grow(&mut nodes, x, &residuals, &rows, 0, &params.tree, &mut scratch);
        let tree = RegressionTree::from_parts(nodes, in_dim, out_dim);

        let mut sq = 0.0;
        for i in 0..n {
            let leaf = tree.leaf_value(&x[i])?;
            for d in 0..out_dim {
                preds[i][d] += params.shrinkage * leaf[d];
                let e = y[i][d] - preds[i][d];
                sq += e * e;
            }
        }
        train_mse.push(sq / (n * out_dim) as f64);
        trees.push(tree);
    }

    Ok(BoostFit {
        ensemble: RegressionEnsemble { base, shrinkage: params.shrinkage, trees, input_dim: in_dim },
        train_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> Vec<Vec<f64>> {
        data.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn one_sample_gives_its_target_back() {
        let x = rows(&[&[1.0, 2.0]]);
        let y = rows(&[&[3.0, -1.0, 0.5]]);
        let tree = fit_regression_tree(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(tree.num_leaves(), 1);
        assert_eq!(tree.leaf_value(&[9.0, 9.0]).unwrap(), &[3.0, -1.0, 0.5]);
    }

    #[test]
    fn two_separable_samples_split_exactly() {
        let x = rows(&[&[0.0], &[1.0]]);
        let y = rows(&[&[-1.0], &[1.0]]);
        let tree = fit_regression_tree(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.leaf_value(&[0.0]).unwrap(), &[-1.0]);
        assert_eq!(tree.leaf_value(&[1.0]).unwrap(), &[1.0]);
    }

    #[test]
    fn constant_features_yield_single_leaf() {
        let x = rows(&[&[2.0], &[2.0], &[2.0]]);
        let y = rows(&[&[1.0], &[2.0], &[3.0]]);
        let tree = fit_regression_tree(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(tree.num_leaves(), 1);
        assert_eq!(tree.leaf_value(&[2.0]).unwrap(), &[2.0]);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let e = fit_regression_tree(&[], &[], &TreeParams::default());
        assert!(matches!(e, Err(Error::EmptyDataset)));
    }

    #[test]
    fn zero_rounds_is_an_error() {
        let x = rows(&[&[0.0]]);
        let y = rows(&[&[0.0]]);
        let params = BoostParams { rounds: 0, ..Default::default() };
        assert!(fit_ensemble(&x, &y, &params).is_err());
    }

    #[test]
    fn single_deep_round_memorizes() {
        let x = rows(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let y = rows(&[&[5.0], &[-2.0], &[0.25], &[9.0]]);
        let params = BoostParams {
            rounds: 1,
            shrinkage: 1.0,
            tree: TreeParams { max_depth: 8, min_samples_leaf: 1 },
            ..Default::default()
        };
        let fit = fit_ensemble(&x, &y, &params).unwrap();
        assert!(fit.train_mse[0] < 1e-24);
        for (xi, yi) in x.iter().zip(&y) {
            let p = fit.ensemble.predict(xi).unwrap();
            assert!((p[0] - yi[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn training_mse_never_increases() {
        // 200 samples of a noisy two-output function.
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let a = next() * 4.0 - 2.0;
            let b = next() * 4.0 - 2.0;
            x.push(vec![a, b]);
            y.push(vec![(a * 3.0).sin() + b, a * b + 0.2 * next()]);
        }
        let params = BoostParams {
            rounds: 10,
            shrinkage: 0.4,
            tree: TreeParams { max_depth: 3, min_samples_leaf: 2 },
            ..Default::default()
        };
        let fit = fit_ensemble(&x, &y, &params).unwrap();
        for w in fit.train_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "MSE increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn split_gains_are_recorded_and_nonnegative() {
        let x = rows(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let y = rows(&[&[0.0], &[0.0], &[4.0], &[4.0]]);
        let tree = fit_regression_tree(&x, &y, &TreeParams::default()).unwrap();
        let mut saw_split = false;
        for node in tree.nodes() {
            if let RegNode::Split { gain, .. } = node {
                saw_split = true;
                assert!(*gain >= 0.0);
            }
        }
        assert!(saw_split);
    }
}
