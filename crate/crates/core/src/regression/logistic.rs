//! L1-regularized logistic regression by proximal Newton: each outer step
//! builds the usual weighted least-squares surrogate at the current estimate
//! and minimizes it with penalized coordinate descent, with backtracking
//! toward the previous iterate if the true objective ever rises.

use crate::encoding::DenseDesign;

use super::{check_lengths, FitResult, RegressionError, CD_MAX_SWEEPS, CD_TOL, LOGISTIC_TOL};

const OUTER_CAP: u64 = 100;
const INNER_CAP: u64 = 1_000;
const MIN_WEIGHT: f64 = 1e-5;
const BACKTRACK_CAP: u32 = 30;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^eta) without overflow for large |eta|.
fn log1p_exp(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn linear_predictor(design: &DenseDesign, beta: &[f64]) -> Vec<f64> {
    let mut eta = vec![0.0; design.n_rows];
    for j in 0..design.n_cols {
        let b = beta[j];
        if b != 0.0 {
            for (e, x) in eta.iter_mut().zip(design.col(j)) {
                *e += b * x;
            }
        }
    }
    eta
}

/// Mean negative log-likelihood (1/n)·Σ ln(1 + e^η) − y·η.
pub fn logistic_nll(design: &DenseDesign, y: &[f64], beta: &[f64]) -> f64 {
    let eta = linear_predictor(design, beta);
    let n = design.n_rows as f64;
    eta.iter()
        .zip(y)
        .map(|(&e, &v)| log1p_exp(e) - v * e)
        .sum::<f64>()
        / n
}

/// The full objective: mean negative log-likelihood plus λ times the L1
/// norm of the non-intercept coefficients.
pub fn logistic_objective(design: &DenseDesign, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    logistic_nll(design, y, beta) + lambda * beta[1..].iter().map(|b| b.abs()).sum::<f64>()
}

/// Gradient of the smooth part: (1/n)·X'(p − y) with p = σ(Xβ).
pub fn logistic_gradient(design: &DenseDesign, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let eta = linear_predictor(design, beta);
    let n = design.n_rows as f64;
    let diff: Vec<f64> = eta.iter().zip(y).map(|(&e, &v)| sigmoid(e) - v).collect();
    (0..design.n_cols)
        .map(|j| {
            design
                .col(j)
                .iter()
                .zip(&diff)
                .map(|(x, d)| x * d)
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Fit the binary-response model by proximal Newton. Responses must be
/// exactly 0.0 or 1.0. The returned `mse` field holds the final penalized
/// objective value (there is no meaningful squared error here), residuals
/// are y − p̂, and the classical inference fields are absent.
pub fn fit_logistic(
    design: &DenseDesign,
    y: &[f64],
    lambda: f64,
) -> Result<FitResult, RegressionError> {
    check_lengths(design, y)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(RegressionError::BadLambda(lambda));
    }
    for (row, &v) in y.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(RegressionError::NotBinary { value: v, row });
        }
    }
    let m = design.n_rows;
    let n_cols = design.n_cols;
    let nf = m as f64;
    let mut beta = vec![0.0f64; n_cols];
    let mut eta = vec![0.0f64; m];
    let mut objective = logistic_objective(design, y, &beta, lambda);
    let mut sweeps = 0u64;
    let mut converged = false;

    for _ in 0..OUTER_CAP {
        // Quadratic surrogate at the current estimate.
        let mut weights = vec![0.0f64; m];
        let mut z = vec![0.0f64; m];
        for i in 0..m {
            let p = sigmoid(eta[i]);
            let w = (p * (1.0 - p)).max(MIN_WEIGHT);
            weights[i] = w;
            z[i] = eta[i] + (y[i] - p) / w;
        }
        let col_sq: Vec<f64> = (0..n_cols)
            .map(|j| {
                design
                    .col(j)
                    .iter()
                    .zip(&weights)
                    .map(|(x, w)| w * x * x)
                    .sum()
            })
            .collect();
        let previous = beta.clone();
        // Weighted residual for the surrogate response.
        let mut residual: Vec<f64> = (0..m)
            .map(|i| {
                let fitted: f64 = (0..n_cols).map(|j| design.col(j)[i] * beta[j]).sum();
                z[i] - fitted
            })
            .collect();
        let mut inner = 0u64;
        loop {
            let mut max_change = 0.0f64;
            for j in 0..n_cols {
                let s = col_sq[j];
                if s == 0.0 {
                    continue;
                }
                let col = design.col(j);
                let dot: f64 = col
                    .iter()
                    .zip(&residual)
                    .zip(&weights)
                    .map(|((x, r), w)| w * x * r)
                    .sum();
                let g = dot / nf + (s / nf) * beta[j];
                let new = if j == 0 {
                    g * nf / s
                } else {
                    let t = if g > lambda {
                        g - lambda
                    } else if g < -lambda {
                        g + lambda
                    } else {
                        0.0
                    };
                    t * nf / s
                };
                let delta = new - beta[j];
                if delta != 0.0 {
                    for (r, x) in residual.iter_mut().zip(col) {
                        *r -= delta * x;
                    }
                    beta[j] = new;
                }
                max_change = max_change.max(delta.abs());
            }
            inner += 1;
            sweeps += 1;
            if max_change < CD_TOL.max(1e-9) || inner >= INNER_CAP || sweeps >= CD_MAX_SWEEPS {
                break;
            }
        }
        // Evaluate the true objective; backtrack toward the previous
        // iterate if the surrogate step overshot.
        let mut new_objective = logistic_objective(design, y, &beta, lambda);
        let mut halvings = 0u32;
        while new_objective > objective && halvings < BACKTRACK_CAP {
            for j in 0..n_cols {
                beta[j] = 0.5 * (beta[j] + previous[j]);
            }
            new_objective = logistic_objective(design, y, &beta, lambda);
            halvings += 1;
        }
        if new_objective > objective {
            // No descent direction left at working precision; restore the
            // previous iterate and stop.
            beta = previous;
            converged = true;
            break;
        }
        let decrease = objective - new_objective;
        objective = new_objective;
        eta = linear_predictor(design, &beta);
        if decrease < LOGISTIC_TOL {
            converged = true;
            break;
        }
    }

    let residuals: Vec<f64> = eta
        .iter()
        .zip(y)
        .map(|(&e, &v)| v - sigmoid(e))
        .collect();
    Ok(FitResult {
        column_labels: design.labels.clone(),
        coefficients: beta,
        std_errors: None,
        t_stats: None,
        p_values: None,
        residuals,
        sigma2_hat: None,
        r_squared: None,
        adj_r_squared: None,
        mse: objective,
        dof: m as i64 - n_cols as i64,
        lambda,
        converged,
        sweeps,
    })
}
