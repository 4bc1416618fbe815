//! FDR-controlled factor selection with knockoffs.
//!
//! For one (y, X) task: build knockoffs of X, fit the chosen learner on the
//! augmented matrix [X, X̃], contrast each factor's quality statistic with
//! its knockoff's, and keep the factors whose contrast clears the
//! data-dependent threshold. Repeated runs are aggregated by union (the
//! remedy for empty-selection instability) and bootstraps by selection
//! counts.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knockoff::{estimate_moments, sample_knockoffs, solve_s_equi};
use crate::learners::{fit_forest, lasso_path, ForestConfig};
use crate::panel::{generate_synthetic, ReturnsPanel, SyntheticSpec};
use crate::seed::{derive_seed, rng_from};
use crate::stats::{standardize_columns, standardize_vector};

use rand::Rng;

/// Grid resolution of the LASSO path used for entry statistics.
const LASSO_GRID: usize = 100;

// seed-stream tags
const TAG_KNOCKOFF: u64 = 1;
const TAG_LEARNER: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_RUN: u64 = 4;
const TAG_BOOTSTRAP: u64 = 5;
const TAG_TRIAL: u64 = 6;

/// Quality statistic used to score factors against their knockoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Largest penalty at which a coefficient enters the LASSO path.
    LassoPath,
    /// Impurity-decrease importance from a regression forest.
    ForestImportance,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::LassoPath => write!(f, "lasso_path"),
            Method::ForestImportance => write!(f, "forest_importance"),
        }
    }
}

/// Per-factor scores: the factor's own quality, its knockoff's, and the
/// contrast the threshold operates on.
#[derive(Debug, Clone)]
pub struct KnockoffStatistics {
    pub original_score: Vec<f64>,
    pub knockoff_score: Vec<f64>,
    /// Signed contrast: difference for forest importance, signed max for
    /// LASSO entry values. Flipping a factor with its knockoff flips the sign.
    pub contrast: Vec<f64>,
    pub method: Method,
}

/// One selection outcome at a target FDR level.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub statistics: KnockoffStatistics,
    pub q: f64,
    /// Threshold on the contrast; `INFINITY` when no threshold satisfies the
    /// bound (then nothing is selected).
    pub threshold: f64,
    pub selected: BTreeSet<usize>,
    pub empty: bool,
}

/// One (q, trial) cell of a calibration experiment.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationCell {
    pub q: f64,
    pub trial: usize,
    pub fdp: f64,
    pub power: f64,
}

/// Realized FDR versus chosen FDR on the synthetic ground-truth design.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub q_grid: Vec<f64>,
    pub cells: Vec<CalibrationCell>,
    /// Mean false-discovery proportion per q level.
    pub realized_fdr: Vec<f64>,
    /// Mean fraction of the true support recovered per q level.
    pub mean_power: Vec<f64>,
}

impl CalibrationReport {
    /// Serialize as `q,trial,fdp,power` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,trial,fdp,power\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{},{}\n", c.q, c.trial, c.fdp, c.power));
        }
        out
    }
}

/// Data-dependent threshold controlling the FDR at level `q`.
///
/// Scans the nonzero contrast magnitudes in increasing order and returns the
/// smallest `t` with `(1 + #{w <= -t}) / max(1, #{w >= t}) <= q`, together
/// with the selected set `{j : w_j >= t}`. The `+1` in the numerator is what
/// controls the FDR itself rather than a modified version of it.
pub fn knockoff_threshold(contrast: &[f64], q: f64) -> Result<(f64, BTreeSet<usize>)> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain("q must lie strictly between 0 and 1"));
    }
    if contrast.iter().any(|w| !w.is_finite()) {
        return Err(Error::domain("contrast statistics must be finite"));
    }
    let mut candidates: Vec<f64> = contrast
        .iter()
        .filter(|&&w| w != 0.0)
        .map(|w| w.abs())
        .collect();
    candidates.sort_by(|a, b| a.total_cmp(b));
    candidates.dedup();

    for &t in &candidates {
        let negatives = contrast.iter().filter(|&&w| w <= -t).count();
        let positives = contrast.iter().filter(|&&w| w >= t).count();
        let ratio = (1 + negatives) as f64 / positives.max(1) as f64;
        if ratio <= q {
            let selected = contrast
                .iter()
                .enumerate()
                .filter(|(_, &w)| w >= t)
                .map(|(j, _)| j)
                .collect();
            return Ok((t, selected));
        }
    }
    Ok((f64::INFINITY, BTreeSet::new()))
}

/// Contrast from paired scores: plain difference for forest importance,
/// signed max for LASSO entry values.
pub fn contrast_from_scores(original: &[f64], knockoff: &[f64], method: Method) -> Vec<f64> {
    original
        .iter()
        .zip(knockoff.iter())
        .map(|(&z, &zt)| match method {
            Method::ForestImportance => z - zt,
            Method::LassoPath => {
                if z == zt {
                    0.0
                } else {
                    z.max(zt) * (z - zt).signum()
                }
            }
        })
        .collect()
}

/// Score the augmented matrix [originals, knockoffs] against `y`.
///
/// The augmented columns are shuffled before fitting (and the scores
/// unshuffled after) so that no learner bias can attach to column position.
pub fn compute_statistics(
    originals: &DMatrix<f64>,
    knockoffs: &DMatrix<f64>,
    y: &DVector<f64>,
    method: Method,
    seed: u64,
) -> Result<KnockoffStatistics> {
    let t = originals.nrows();
    let n = originals.ncols();
    if knockoffs.nrows() != t || knockoffs.ncols() != n {
        return Err(Error::domain("originals and knockoffs must share a shape"));
    }
    let p = 2 * n;

    let mut perm: Vec<usize> = (0..p).collect();
    let mut rng = rng_from(derive_seed(seed, &[TAG_SHUFFLE]));
    for i in 0..p {
        let j = rng.random_range(i..p);
        perm.swap(i, j);
    }

    let mut augmented = DMatrix::zeros(t, p);
    for (k, &src) in perm.iter().enumerate() {
        if src < n {
            augmented.column_mut(k).copy_from(&originals.column(src));
        } else {
            augmented
                .column_mut(k)
                .copy_from(&knockoffs.column(src - n));
        }
    }

    let shuffled_scores: Vec<f64> = match method {
        Method::LassoPath => lasso_path(&augmented, y, LASSO_GRID)?.entry_lambda,
        Method::ForestImportance => {
            fit_forest(
                &augmented,
                y,
                &ForestConfig::default(),
                derive_seed(seed, &[TAG_LEARNER]),
            )?
            .importance
        }
    };

    let mut scores = vec![0.0; p];
    for (k, &src) in perm.iter().enumerate() {
        scores[src] = shuffled_scores[k];
    }
    let original_score = scores[..n].to_vec();
    let knockoff_score = scores[n..].to_vec();
    let contrast = contrast_from_scores(&original_score, &knockoff_score, method);

    Ok(KnockoffStatistics {
        original_score,
        knockoff_score,
        contrast,
        method,
    })
}

/// Statistics for one calibration task: standardize, build knockoffs, score.
fn statistics_for_task(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    method: Method,
    seed: u64,
) -> Result<KnockoffStatistics> {
    let x_std = standardize_columns(x)?;
    let y_std = standardize_vector(y);
    let moments = estimate_moments(&x_std)?;
    let s = solve_s_equi(&moments.covariance)?;
    let sample = sample_knockoffs(&x_std, &moments, &s, derive_seed(seed, &[TAG_KNOCKOFF]))?;
    compute_statistics(
        &sample.originals,
        &sample.knockoffs,
        &y_std,
        method,
        derive_seed(seed, &[TAG_LEARNER]),
    )
}

/// One full selection: knockoffs, statistics, threshold.
pub fn select_once(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    method: Method,
    q: f64,
    seed: u64,
) -> Result<SelectionResult> {
    let statistics = statistics_for_task(y, x, method, seed)?;
    let (threshold, selected) = knockoff_threshold(&statistics.contrast, q)?;
    let empty = selected.is_empty();
    Ok(SelectionResult {
        statistics,
        q,
        threshold,
        selected,
        empty,
    })
}

/// Union of the selections from `n_runs` independent knockoff draws.
///
/// A single knockoff draw yields an empty selection a sizable fraction of
/// the time; the union over repeated draws is the standard remedy.
pub fn select_stabilized(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    method: Method,
    q: f64,
    n_runs: usize,
    seed: u64,
) -> Result<BTreeSet<usize>> {
    if n_runs < 1 {
        return Err(Error::domain("n_runs must be at least 1"));
    }
    let runs: Vec<Result<BTreeSet<usize>>> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            select_once(y, x, method, q, derive_seed(seed, &[TAG_RUN, run as u64]))
                .map(|r| r.selected)
        })
        .collect();
    let mut union = BTreeSet::new();
    for run in runs {
        union.extend(run?);
    }
    Ok(union)
}

/// Selection counts per panel asset over column-subset bootstraps
/// (sampled without replacement within each bootstrap).
pub fn bootstrap_select(
    y: &DVector<f64>,
    panel: &ReturnsPanel,
    subset_size: usize,
    n_bootstraps: usize,
    method: Method,
    q: f64,
    seed: u64,
) -> Result<Vec<u32>> {
    let n = panel.n_assets();
    if subset_size > n {
        return Err(Error::domain(format!(
            "subset_size {subset_size} exceeds the {n} available assets"
        )));
    }
    if subset_size == 0 || n_bootstraps == 0 {
        return Err(Error::domain("subset_size and n_bootstraps must be positive"));
    }
    let t = panel.n_periods();

    let per_bootstrap: Vec<Result<Vec<usize>>> = (0..n_bootstraps)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from(derive_seed(seed, &[TAG_BOOTSTRAP, b as u64]));
            let mut pool: Vec<usize> = (0..n).collect();
            for i in 0..subset_size {
                let j = rng.random_range(i..n);
                pool.swap(i, j);
            }
            let chosen = &pool[..subset_size];
            let mut x = DMatrix::zeros(t, subset_size);
            for (k, &j) in chosen.iter().enumerate() {
                x.column_mut(k).copy_from(&panel.values().column(j));
            }
            let result = select_once(y, &x, method, q, derive_seed(seed, &[TAG_RUN, b as u64]))?;
            Ok(result.selected.iter().map(|&k| chosen[k]).collect())
        })
        .collect();

    let mut counts = vec![0u32; n];
    for selected in per_bootstrap {
        for j in selected? {
            counts[j] += 1;
        }
    }
    Ok(counts)
}

/// Realized FDR and power across a q grid on the synthetic design.
///
/// The contrast statistics do not depend on q, so each trial scores its
/// knockoff draw once and applies every threshold to the same statistics —
/// exactly equivalent to running `select_once` per q with a shared seed.
pub fn calibrate_fdr(
    spec: &SyntheticSpec,
    q_grid: &[f64],
    method: Method,
    trials: usize,
) -> Result<CalibrationReport> {
    if trials < 50 {
        return Err(Error::domain("calibration needs at least 50 trials"));
    }
    if q_grid.is_empty() {
        return Err(Error::domain("q_grid must not be empty"));
    }
    spec.validate()?;

    let per_trial: Vec<Result<Vec<CalibrationCell>>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut trial_spec = spec.clone();
            trial_spec.seed = derive_seed(spec.seed, &[TAG_TRIAL, trial as u64]);
            let (panel, support) = generate_synthetic(&trial_spec)?;
            let t = panel.n_periods();
            let n = panel.n_assets() - 1;
            let y = panel.column(0);
            let x = panel.values().view((0, 1), (t, n)).into_owned();
            let stats = statistics_for_task(
                &y,
                &x,
                method,
                derive_seed(spec.seed, &[TAG_TRIAL, trial as u64, 1]),
            )?;
            q_grid
                .iter()
                .map(|&q| {
                    let (_, selected) = knockoff_threshold(&stats.contrast, q)?;
                    let false_hits = selected.difference(&support).count();
                    let fdp = if selected.is_empty() {
                        0.0
                    } else {
                        false_hits as f64 / selected.len() as f64
                    };
                    let power = if support.is_empty() {
                        0.0
                    } else {
                        selected.intersection(&support).count() as f64 / support.len() as f64
                    };
                    Ok(CalibrationCell {
                        q,
                        trial,
                        fdp,
                        power,
                    })
                })
                .collect()
        })
        .collect();

    let mut cells = Vec::with_capacity(trials * q_grid.len());
    for trial_cells in per_trial {
        cells.extend(trial_cells?);
    }

    let realized_fdr = q_grid
        .iter()
        .map(|&q| {
            let vals: Vec<f64> = cells.iter().filter(|c| c.q == q).map(|c| c.fdp).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let mean_power = q_grid
        .iter()
        .map(|&q| {
            let vals: Vec<f64> = cells.iter().filter(|c| c.q == q).map(|c| c.power).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();

    Ok(CalibrationReport {
        q_grid: q_grid.to_vec(),
        cells,
        realized_fdr,
        mean_power,
    })
}
