//! Bagged regression trees with impurity-decrease feature importance.
//!
//! Trees are grown on bootstrap resamples with variance-reduction splits.
//! The importance of a feature is the total sum-of-squares reduction
//! attributed to its splits across the whole forest, normalized to sum to
//! one. Only the importance ranking feeds the knockoff statistic, so the
//! cheaper impurity-based measure is used rather than permutation
//! importance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ignore split gains below this absolute sum-of-squares reduction.
const MIN_GAIN: f64 = 1e-12;

/// Forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until the leaf-size constraint stops them.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features considered per split; `None` uses `ceil(p / 3)`.
    pub mtry: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_leaf: 5,
            mtry: None,
        }
    }
}

/// Fitted forest summary: configuration actually used plus normalized
/// importance per feature.
#[derive(Debug, Clone)]
pub struct ForestModel {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub mtry: usize,
    /// Nonnegative, sums to 1 when any split occurred, all zero otherwise.
    pub importance: Vec<f64>,
    pub seed: u64,
}

/// Fit a regression forest and accumulate impurity-decrease importance.
///
/// Deterministic given the seed: each tree draws from its own derived RNG
/// stream, so the result is independent of how trees are scheduled.
pub fn fit_forest(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &ForestConfig,
    seed: u64,
) -> Result<ForestModel> {
    let t = x.nrows();
    let p = x.ncols();
    if y.len() != t {
        return Err(Error::domain("x and y have different numbers of rows"));
    }
    if config.min_leaf == 0 || config.n_trees == 0 {
        return Err(Error::domain("n_trees and min_leaf must be positive"));
    }
    if t < 2 * config.min_leaf {
        return Err(Error::domain(format!(
            "need at least {} rows for min_leaf {}",
            2 * config.min_leaf,
            config.min_leaf
        )));
    }
    let mtry = config.mtry.unwrap_or_else(|| p.div_ceil(3)).clamp(1, p.max(1));

    let per_tree: Vec<Vec<f64>> = (0..config.n_trees)
        .into_par_iter()
        .map(|tree_idx| {
            let mut rng = rng_from(derive_seed(seed, &[tree_idx as u64]));
            grow_tree(x, y, config, mtry, &mut rng)
        })
        .collect();

    let mut importance = vec![0.0; p];
    for tree in &per_tree {
        for (j, v) in tree.iter().enumerate() {
            importance[j] += v;
        }
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        for v in importance.iter_mut() {
            *v /= total;
        }
    }

    Ok(ForestModel {
        n_trees: config.n_trees,
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        mtry,
        importance,
        seed,
    })
}

/// Grow one tree on a bootstrap resample; returns the per-feature
/// sum-of-squares reduction it accumulated.
fn grow_tree(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &ForestConfig,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let t = x.nrows();
    let p = x.ncols();
    let sample: Vec<usize> = (0..t).map(|_| rng.random_range(0..t)).collect();

    let mut importance = vec![0.0; p];
    // (node rows, depth) work list
    let mut stack: Vec<(Vec<usize>, usize)> = vec![(sample, 0)];
    let mut feature_pool: Vec<usize> = (0..p).collect();

    while let Some((rows, depth)) = stack.pop() {
        let n = rows.len();
        if n < 2 * config.min_leaf {
            continue;
        }
        if let Some(cap) = config.max_depth {
            if depth >= cap {
                continue;
            }
        }
        let (sum, sumsq) = rows
            .iter()
            .fold((0.0, 0.0), |(s, ss), &i| (s + y[i], ss + y[i] * y[i]));
        let parent_sse = sumsq - sum * sum / n as f64;
        if parent_sse <= MIN_GAIN {
            continue; // pure node
        }

        // feature subset: all features in index order when mtry == p (no RNG
        // consumed), otherwise a partial Fisher-Yates draw
        let subset: Vec<usize> = if mtry >= p {
            (0..p).collect()
        } else {
            for i in 0..mtry {
                let j = rng.random_range(i..p);
                feature_pool.swap(i, j);
            }
            feature_pool[..mtry].to_vec()
        };

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut order = rows.clone();
        for &f in &subset {
            order.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]));
            let mut left_sum = 0.0;
            let mut left_sumsq = 0.0;
            for k in 1..n {
                let i = order[k - 1];
                left_sum += y[i];
                left_sumsq += y[i] * y[i];
                if k < config.min_leaf || n - k < config.min_leaf {
                    continue;
                }
                let lo = x[(order[k - 1], f)];
                let hi = x[(order[k], f)];
                if lo >= hi {
                    continue; // no cut between identical values
                }
                let right_sum = sum - left_sum;
                let right_sumsq = sumsq - left_sumsq;
                let sse_left = left_sumsq - left_sum * left_sum / k as f64;
                let sse_right = right_sumsq - right_sum * right_sum / (n - k) as f64;
                let gain = parent_sse - sse_left - sse_right;
                if gain > MIN_GAIN && best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (lo + hi)));
                }
            }
        }

        if let Some((gain, feature, threshold)) = best {
            importance[feature] += gain;
            let (left, right): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x[(i, feature)] <= threshold);
            stack.push((left, depth + 1));
            stack.push((right, depth + 1));
        }
    }
    importance
}
