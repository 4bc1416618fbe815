//! Huber regression by iteratively reweighted least squares.
//!
//! The residual scale is re-estimated each iteration as 1.4826 times the
//! median absolute deviation, and observations beyond 1.345 scales are
//! downweighted. With the tuning constant sent to infinity the weights stay
//! at one and the fit reduces to ordinary least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::{mad, median};

const DEFAULT_TUNING: f64 = 1.345;
const MAD_TO_SIGMA: f64 = 1.4826;
const MAX_ITERATIONS: usize = 100;
const REL_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-8;

/// Result of a robust linear fit.
#[derive(Debug, Clone)]
pub struct RobustFit {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    /// Robust residual scale at convergence.
    pub scale: f64,
    pub iterations: usize,
    /// True when a ridge jitter was needed for a rank-deficient design.
    pub ridged: bool,
}

impl RobustFit {
    /// Forecast for one predictor row.
    pub fn predict(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.coefficients.len());
        self.intercept
            + row
                .iter()
                .zip(self.coefficients.iter())
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }
}

/// Huber fit with the standard 1.345 tuning constant.
pub fn huber_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RobustFit> {
    huber_fit_with_tuning(x, y, DEFAULT_TUNING)
}

/// Huber fit with an explicit tuning constant (in units of the robust scale).
pub fn huber_fit_with_tuning(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tuning: f64,
) -> Result<RobustFit> {
    let t = x.nrows();
    let k = x.ncols();
    if y.len() != t {
        return Err(Error::domain("x and y have different numbers of rows"));
    }
    if k >= t {
        return Err(Error::domain(format!(
            "robust fit needs more rows than predictors (k = {k}, T = {t})"
        )));
    }
    if !(tuning > 0.0) {
        return Err(Error::domain("tuning constant must be positive"));
    }

    // design with intercept column
    let mut design = DMatrix::zeros(t, k + 1);
    design.column_mut(0).fill(1.0);
    design.view_mut((0, 1), (t, k)).copy_from(x);

    let mut ridged = false;
    let weights = DVector::from_element(t, 1.0);
    let mut params = solve_weighted(&design, y, &weights, &mut ridged)?;

    let zero_scale_floor = 1e-12 * (1.0 + y.amax());
    let mut scale = 0.0;
    let mut iterations = 0;
    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        let residuals = y - &design * &params;
        let res_slice: Vec<f64> = residuals.iter().copied().collect();
        scale = MAD_TO_SIGMA * mad(&res_slice);
        if scale <= zero_scale_floor {
            if residuals.amax() <= 1e-8 * (1.0 + y.amax()) {
                break; // essentially a perfect fit
            }
            // degenerate MAD (heavy residual ties): fall back to the mean
            // absolute deviation, consistent for Gaussian residuals
            let m = median(&res_slice);
            scale = 1.2533 * res_slice.iter().map(|r| (r - m).abs()).sum::<f64>() / t as f64;
            if scale <= zero_scale_floor {
                break;
            }
        }
        let cutoff = tuning * scale;
        let w = DVector::from_fn(t, |i, _| {
            let a = residuals[i].abs();
            if a <= cutoff {
                1.0
            } else {
                cutoff / a
            }
        });
        let next = solve_weighted(&design, y, &w, &mut ridged)?;
        let delta = (&next - &params).norm();
        let denom = params.norm().max(1e-12);
        params = next;
        if delta / denom < REL_TOL {
            break;
        }
    }

    Ok(RobustFit {
        coefficients: params.rows(1, k).into_owned(),
        intercept: params[0],
        scale,
        iterations,
        ridged,
    })
}

fn solve_weighted(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &DVector<f64>,
    ridged: &mut bool,
) -> Result<DVector<f64>> {
    let mut weighted = design.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= weights[i];
    }
    let mut normal = design.transpose() * &weighted;
    let rhs = weighted.transpose() * y;
    match normal.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => {
            *ridged = true;
            for j in 0..normal.nrows() {
                normal[(j, j)] += RIDGE;
            }
            normal
                .cholesky()
                .map(|chol| chol.solve(&rhs))
                .ok_or_else(|| Error::domain("normal equations not solvable even with ridge"))
        }
    }
}
