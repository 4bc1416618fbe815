//! Second-order Gaussian knockoff construction.
//!
//! A knockoff matrix X̃ mimics the dependence structure of the factor matrix
//! X while being irrelevant to the response by construction. This module
//! implements the moment-matching construction: estimate the first two
//! moments of X, solve for the per-feature decoupling vector `s` with the
//! equicorrelated rule, then draw each knockoff row from the Gaussian
//! conditional so that the joint second moments of [X, X̃] are invariant
//! under swapping any factor with its knockoff.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::stats::column_means;

/// Minimum-eigenvalue floor, as a fraction of the average variance.
const EIGENVALUE_FLOOR: f64 = 1e-3;
/// Tolerance for negative eigenvalues of the conditional covariance before
/// clipping them to zero.
const PSD_TOLERANCE: f64 = -1e-10;

/// First two moments of a factor matrix, with the covariance shrunk toward
/// its diagonal just enough to be safely positive definite.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Shrinkage weight actually applied, in [0, 1].
    pub shrinkage_used: f64,
}

/// A sampled knockoff matrix paired with its originals and the decoupling
/// vector used to draw it.
#[derive(Debug, Clone)]
pub struct KnockoffSample {
    pub originals: DMatrix<f64>,
    pub knockoffs: DMatrix<f64>,
    /// Per-feature decoupling parameters, in covariance units.
    pub s: DVector<f64>,
    pub seed: u64,
}

/// Sample mean and covariance of `x`, shrunk toward the diagonal by the
/// smallest factor gamma that lifts the minimum eigenvalue to
/// `EIGENVALUE_FLOOR * trace / N`.
///
/// Shrinking toward the diagonal preserves the trace, so the eigenvalue
/// target is fixed while gamma moves.
pub fn estimate_moments(x: &DMatrix<f64>) -> Result<MomentEstimate> {
    let t = x.nrows();
    let n = x.ncols();
    if t < 2 || n < 1 {
        return Err(Error::domain("moment estimation needs T >= 2 and N >= 1"));
    }
    let mean = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let sample = centered.transpose() * &centered / (t as f64 - 1.0);
    for j in 0..n {
        if sample[(j, j)] < 1e-15 {
            return Err(Error::domain(format!(
                "column {j} has zero variance; knockoffs are undefined for constant factors"
            )));
        }
    }

    let floor = EIGENVALUE_FLOOR * sample.trace() / n as f64;
    let min_eig = |gamma: f64| -> f64 {
        let mut m = sample.clone() * (1.0 - gamma);
        for j in 0..n {
            m[(j, j)] += gamma * sample[(j, j)];
        }
        smallest_eigenvalue(&m)
    };

    let gamma = if min_eig(0.0) >= floor {
        0.0
    } else {
        if min_eig(1.0) < floor {
            return Err(Error::domain(
                "covariance cannot reach the eigenvalue floor even fully shrunk to its diagonal",
            ));
        }
        // min_eig is concave in gamma, so bisection on the first crossing is
        // sound; keep the upper end, which satisfies the floor.
        let mut lo = 0.0;
        let mut hi = 1.0;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if min_eig(mid) >= floor {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };

    let mut covariance = sample.clone() * (1.0 - gamma);
    for j in 0..n {
        covariance[(j, j)] += gamma * sample[(j, j)];
    }
    // exact symmetry for downstream factorizations
    covariance = (&covariance + covariance.transpose()) * 0.5;

    Ok(MomentEstimate {
        mean,
        covariance,
        shrinkage_used: gamma,
    })
}

/// Equicorrelated decoupling vector: on the correlation matrix every entry
/// is `min(2 * lambda_min, 1)`, rescaled back to covariance units.
pub fn solve_s_equi(covariance: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = covariance.nrows();
    if n != covariance.ncols() {
        return Err(Error::domain("covariance must be square"));
    }
    let asym = (covariance - covariance.transpose()).abs().max();
    if asym > 1e-8 {
        return Err(Error::domain("covariance is not symmetric"));
    }
    let mut inv_sd = DVector::zeros(n);
    for j in 0..n {
        let v = covariance[(j, j)];
        if v <= 0.0 {
            return Err(Error::domain("covariance has a non-positive diagonal"));
        }
        inv_sd[j] = 1.0 / v.sqrt();
    }
    let mut corr = covariance.clone();
    for i in 0..n {
        for j in 0..n {
            corr[(i, j)] *= inv_sd[i] * inv_sd[j];
        }
    }
    let lambda_min = smallest_eigenvalue(&corr);
    if lambda_min <= 0.0 {
        return Err(Error::domain("covariance is not positive definite"));
    }
    let s_corr = (2.0 * lambda_min).min(1.0);
    Ok(DVector::from_fn(n, |j, _| s_corr * covariance[(j, j)]))
}

/// Draw knockoffs row by row from the Gaussian conditional
/// `N(x - diag(s) Sigma^-1 (x - mu), 2 diag(s) - diag(s) Sigma^-1 diag(s))`.
///
/// Deterministic given the seed. Fails if `s` is too large for the
/// covariance (conditional covariance not PSD within tolerance).
pub fn sample_knockoffs(
    x: &DMatrix<f64>,
    moments: &MomentEstimate,
    s: &DVector<f64>,
    seed: u64,
) -> Result<KnockoffSample> {
    let t = x.nrows();
    let n = x.ncols();
    if moments.covariance.nrows() != n || s.len() != n {
        return Err(Error::domain("dimension mismatch in knockoff sampling"));
    }

    let chol = moments
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::domain("covariance is not positive definite"))?;

    // inv_sigma_s = Sigma^-1 diag(s)
    let mut inv_sigma_s = DMatrix::from_diagonal(s);
    chol.solve_mut(&mut inv_sigma_s);

    // conditional mean: X - (X - 1 mu') Sigma^-1 diag(s)
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-moments.mean[j]);
    }
    let cond_mean = x - &centered * &inv_sigma_s;

    // conditional covariance: 2 diag(s) - diag(s) Sigma^-1 diag(s)
    let mut cond_cov = DMatrix::from_diagonal(s) * &inv_sigma_s * -1.0;
    for j in 0..n {
        cond_cov[(j, j)] += 2.0 * s[j];
    }
    cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;

    let eig = cond_cov.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < PSD_TOLERANCE {
        return Err(Error::domain(format!(
            "conditional covariance has eigenvalue {min_eig:.3e}; s is too large for the covariance"
        )));
    }
    // factor = U diag(sqrt(max(lambda, 0)))
    let mut factor = eig.eigenvectors.clone();
    for (k, mut col) in factor.column_iter_mut().enumerate() {
        col *= eig.eigenvalues[k].max(0.0).sqrt();
    }

    let mut rng = rng_from(seed);
    let noise = DMatrix::from_fn(t, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let knockoffs = cond_mean + noise * factor.transpose();

    Ok(KnockoffSample {
        originals: x.clone(),
        knockoffs,
        s: s.clone(),
        seed,
    })
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}
