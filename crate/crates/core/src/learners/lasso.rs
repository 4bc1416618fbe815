//! LASSO regularization path by cyclic coordinate descent.
//!
//! The objective is `(1/2T) ||y - X b||^2 + lambda ||b||_1` on standardized
//! columns, solved with warm starts down a log-spaced grid from
//! `lambda_max = ||X'y||_inf / T`, where every coefficient is zero, to
//! `lambda_max * 1e-3`. The per-feature entry value (largest grid lambda at
//! which the coefficient is active) is the quality statistic consumed by the
//! knockoff filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// KKT residual required at every grid point (the public contract is 1e-7).
const KKT_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100_000;
const GRID_RATIO: f64 = 1e-3;
/// A coefficient counts as active once its magnitude exceeds this.
const ENTRY_EPS: f64 = 1e-12;

/// Solution path of the LASSO over a decreasing penalty grid.
#[derive(Debug, Clone)]
pub struct LassoPath {
    /// Strictly decreasing penalty grid.
    pub lambdas: Vec<f64>,
    /// Largest grid lambda at which each feature is active; 0 if never.
    pub entry_lambda: Vec<f64>,
    /// Coefficient vector at each grid point.
    pub coefficients: Vec<DVector<f64>>,
}

/// Fit the full regularization path.
///
/// Expects standardized columns (`x_j' x_j / T = 1`); a column with zero
/// norm never activates. `grid_size` must be at least 10.
pub fn lasso_path(x: &DMatrix<f64>, y: &DVector<f64>, grid_size: usize) -> Result<LassoPath> {
    let t = x.nrows();
    let p = x.ncols();
    if y.len() != t {
        return Err(Error::domain("x and y have different numbers of rows"));
    }
    if grid_size < 10 {
        return Err(Error::domain("grid_size must be at least 10"));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("lasso inputs must be finite"));
    }

    let tf = t as f64;
    let grams: Vec<f64> = (0..p).map(|j| x.column(j).dot(&x.column(j)) / tf).collect();
    let lambda_max = (0..p)
        .map(|j| (x.column(j).dot(y) / tf).abs())
        .fold(0.0_f64, f64::max);

    if lambda_max <= f64::MIN_POSITIVE {
        // response orthogonal to every column; nothing ever enters
        return Ok(LassoPath {
            lambdas: vec![0.0],
            entry_lambda: vec![0.0; p],
            coefficients: vec![DVector::zeros(p)],
        });
    }

    let lambdas: Vec<f64> = (0..grid_size)
        .map(|k| {
            let f = k as f64 / (grid_size as f64 - 1.0);
            lambda_max * GRID_RATIO.powf(f)
        })
        .collect();

    let mut beta = DVector::zeros(p);
    let mut residual = y.clone();
    let mut entry_lambda = vec![0.0; p];
    let mut coefficients = Vec::with_capacity(grid_size);

    for &lambda in &lambdas {
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            for j in 0..p {
                if grams[j] <= 0.0 {
                    continue;
                }
                let old = beta[j];
                let rho = x.column(j).dot(&residual) / tf + grams[j] * old;
                let new = soft_threshold(rho, lambda) / grams[j];
                if new != old {
                    residual.axpy(old - new, &x.column(j).into_owned(), 1.0);
                    beta[j] = new;
                }
            }
            if kkt_residual(x, &residual, &beta, lambda, tf) <= KKT_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::domain(format!(
                "coordinate descent did not reach KKT tolerance at lambda {lambda:.3e}"
            )));
        }
        for j in 0..p {
            if entry_lambda[j] == 0.0 && beta[j].abs() > ENTRY_EPS {
                entry_lambda[j] = lambda;
            }
        }
        coefficients.push(beta.clone());
    }

    Ok(LassoPath {
        lambdas,
        entry_lambda,
        coefficients,
    })
}

/// Subgradient optimality residual: for active coefficients the gradient
/// must equal `lambda * sign(b_j)`, for inactive ones it must stay within
/// `[-lambda, lambda]`.
pub fn kkt_residual(
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    beta: &DVector<f64>,
    lambda: f64,
    t: f64,
) -> f64 {
    let grad = x.transpose() * residual / t;
    beta.iter()
        .zip(grad.iter())
        .map(|(&b, &g)| {
            if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * b.signum()).abs()
            }
        })
        .fold(0.0_f64, f64::max)
}

fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::stats::{standardize_columns, standardize_vector};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_problem(t: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = rng_from(seed);
        let x = DMatrix::from_fn(t, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(t, |_, _| rng.sample::<f64, _>(StandardNormal));
        (
            standardize_columns(&x).unwrap(),
            standardize_vector(&y),
        )
    }

    #[test]
    fn single_feature_entry_matches_soft_threshold() {
        // build a standardized column and a response with x'y / T = 2
        let t = 64;
        let mut rng = rng_from(9);
        let raw = DMatrix::from_fn(t, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = standardize_columns(&raw).unwrap();
        let y = x.column(0) * 2.0;
        let y = DVector::from_column_slice(y.as_slice());

        let path = lasso_path(&x, &y, 50).unwrap();
        assert_abs_diff_eq!(path.lambdas[0], 2.0, epsilon = 1e-12);
        // all-zero at lambda_max, first entry at the next grid point
        assert_eq!(path.coefficients[0][0], 0.0);
        assert_abs_diff_eq!(path.entry_lambda[0], path.lambdas[1], epsilon = 1e-15);
        // closed form along the path: b = max(|x'y|/T - lambda, 0)
        for (k, lambda) in path.lambdas.iter().enumerate() {
            let expected = (2.0 - lambda).max(0.0);
            assert_abs_diff_eq!(path.coefficients[k][0], expected, epsilon = 1e-7);
        }
    }

    #[test]
    fn orthogonal_response_never_enters() {
        // y orthogonal to the single column
        let x = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = DVector::from_column_slice(&[1.0, 1.0, -1.0, -1.0]);
        let path = lasso_path(&x, &y, 30).unwrap();
        assert!(path.entry_lambda.iter().all(|&l| l == 0.0));
        assert!(path.coefficients.iter().all(|c| c.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn coefficients_vanish_at_lambda_max() {
        let (x, y) = random_problem(80, 12, 17);
        let path = lasso_path(&x, &y, 40).unwrap();
        assert!(path.coefficients[0].iter().all(|&b| b == 0.0));
        // grid strictly decreasing
        assert!(path.lambdas.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn kkt_holds_across_random_instances() {
        for seed in 0..20 {
            let (x, y) = random_problem(60, 15, 1000 + seed);
            let path = lasso_path(&x, &y, 25).unwrap();
            for (k, lambda) in path.lambdas.iter().enumerate() {
                let residual = &y - &x * &path.coefficients[k];
                let r = kkt_residual(&x, &residual, &path.coefficients[k], *lambda, 60.0);
                assert!(r <= 1e-7, "seed {seed} grid {k}: kkt residual {r}");
            }
        }
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let mut x = DMatrix::from_element(10, 2, 1.0);
        x[(0, 0)] = f64::NAN;
        let y = DVector::zeros(10);
        assert!(lasso_path(&x, &y, 20).is_err());
    }

    #[test]
    fn entry_lambda_is_a_grid_value_or_zero() {
        let (x, y) = random_problem(50, 8, 23);
        let path = lasso_path(&x, &y, 20).unwrap();
        for &e in &path.entry_lambda {
            assert!(e == 0.0 || path.lambdas.contains(&e));
        }
    }
}
