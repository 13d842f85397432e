use log::warn;
use serde::{Deserialize, Serialize};

pub const LASSO_TOL: f64 = 1e-8;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl LassoModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        assert_eq!(row.len(), self.coefficients.len(), "feature count mismatch");
        self.intercept + row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum::<f64>()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b.abs()).sum()
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// `(1/2n)‖y − Xβ − β₀‖² + λ‖β‖₁` for row-major `x`.
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], model: &LassoModel) -> f64 {
    let n = y.len() as f64;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &t)| (t - model.predict_row(row)).powi(2))
        .sum();
    rss / (2.0 * n) + model.lambda * model.l1_norm()
}

/// Fits LASSO by cyclic coordinate descent with soft-thresholding.
///
/// Stops when the largest coefficient change in a sweep is below 1e-8 or
/// after 10,000 sweeps. Zero-variance columns keep a zero coefficient.
pub fn fit_lasso(x: &[Vec<f64>], y: &[f64], lambda: f64) -> LassoModel {
    fit_lasso_traced(x, y, lambda, false).0
}

/// Like [`fit_lasso`], also returning the objective after every sweep when
/// `trace` is set.
pub fn fit_lasso_traced(x: &[Vec<f64>], y: &[f64], lambda: f64, trace: bool) -> (LassoModel, Vec<f64>) {
    let n = y.len();
    assert!(n >= 2, "LASSO needs at least two samples");
    assert_eq!(x.len(), n, "row count mismatch");
    assert!(lambda >= 0.0 && lambda.is_finite(), "lambda must be finite and non-negative");
    let p = x[0].len();
    let nf = n as f64;
    let columns: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let norms: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf)
        .collect();
    let active: Vec<bool> = columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mean = c.iter().sum::<f64>() / nf;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
            if var <= 1e-12 {
                warn!("LASSO: feature {j} has zero variance and is excluded");
                false
            } else {
                true
            }
        })
        .collect();

    let mut beta = vec![0.0; p];
    let mut intercept = y.iter().sum::<f64>() / nf;
    let mut residual: Vec<f64> = y.iter().map(|t| t - intercept).collect();
    let mut objectives = Vec::new();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        // Intercept first: it is unpenalized.
        let shift = residual.iter().sum::<f64>() / nf;
        if shift != 0.0 {
            intercept += shift;
            residual.iter_mut().for_each(|r| *r -= shift);
        }
        for j in 0..p {
            if !active[j] {
                continue;
            }
            let col = &columns[j];
            let rho = col.iter().zip(&residual).map(|(a, r)| a * r).sum::<f64>() / nf + norms[j] * beta[j];
            let new = soft_threshold(rho, lambda) / norms[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, a) in residual.iter_mut().zip(col) {
                    *r -= delta * a;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if trace {
            let model = LassoModel {
                coefficients: beta.clone(),
                intercept,
                lambda,
            };
            objectives.push(lasso_objective(x, y, &model));
        }
        if max_change < LASSO_TOL {
            break;
        }
    }
    (
        LassoModel {
            coefficients: beta,
            intercept,
            lambda,
        },
        objectives,
    )
}
