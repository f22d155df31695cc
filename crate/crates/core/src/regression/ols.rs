//! Ordinary least squares via Householder QR, with rank detection and the
//! full inference set: standard errors from the triangular factor, two-sided
//! t-tests, and (adjusted) R-squared.

use crate::encoding::DenseDesign;

use super::special::student_t_two_sided_p;
use super::{check_lengths, tss, FitResult, RegressionError};

/// Relative diagonal threshold for declaring a column linearly dependent.
const RANK_TOL: f64 = 1e-8;

/// Compact Householder factorization. `qr` holds R on and above the
/// diagonal and the reflector tails below it (tail head normalized to 1);
/// `tau` holds the reflector scales.
struct QrFactors {
    qr: Vec<f64>,
    tau: Vec<f64>,
    m: usize,
    n: usize,
}

impl QrFactors {
    fn factorize(design: &DenseDesign) -> Self {
        let m = design.n_rows;
        let n = design.n_cols;
        let mut qr = design.data.clone();
        let mut tau = vec![0.0; n];
        for k in 0..n {
            let norm = {
                let col = &qr[k * m..(k + 1) * m];
                col[k..].iter().map(|v| v * v).sum::<f64>().sqrt()
            };
            if norm == 0.0 {
                // Zero tail: no reflection, R_kk = 0 marks the dependency.
                continue;
            }
            let x0 = qr[k * m + k];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let v0 = x0 - alpha;
            tau[k] = (alpha - x0) / alpha;
            // Normalize the stored tail so its head is implicitly 1.
            for i in k + 1..m {
                qr[k * m + i] /= v0;
            }
            qr[k * m + k] = alpha;
            for j in k + 1..n {
                let mut c = qr[j * m + k];
                for i in k + 1..m {
                    c += qr[k * m + i] * qr[j * m + i];
                }
                c *= tau[k];
                qr[j * m + k] -= c;
                for i in k + 1..m {
                    qr[j * m + i] -= c * qr[k * m + i];
                }
            }
        }
        QrFactors { qr, tau, m, n }
    }

    fn r(&self, row: usize, col: usize) -> f64 {
        self.qr[col * self.m + row]
    }

    /// Columns whose diagonal entry is negligible next to the largest one.
    fn dependent_columns(&self) -> Vec<usize> {
        let max_diag = (0..self.n)
            .map(|j| self.r(j, j).abs())
            .fold(0.0f64, f64::max);
        let tol = RANK_TOL * max_diag.max(f64::MIN_POSITIVE);
        (0..self.n)
            .filter(|&j| self.r(j, j).abs() <= tol)
            .collect()
    }

    /// Overwrite `v` with Q'v.
    fn apply_qt(&self, v: &mut [f64]) {
        for k in 0..self.n {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut c = v[k];
            for i in k + 1..self.m {
                c += self.qr[k * self.m + i] * v[i];
            }
            c *= self.tau[k];
            v[k] -= c;
            for i in k + 1..self.m {
                v[i] -= c * self.qr[k * self.m + i];
            }
        }
    }

    /// Solve R x = rhs[0..n] by back substitution.
    fn solve_upper(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        for j in (0..n).rev() {
            let mut sum = rhs[j];
            for l in j + 1..n {
                sum -= self.r(j, l) * x[l];
            }
            x[j] = sum / self.r(j, j);
        }
        x
    }

    /// Column-major inverse of R (n by n).
    fn invert_r(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        for col in 0..n {
            // Solve R x = e_col; x is zero below the diagonal entry.
            for j in (0..=col).rev() {
                let mut sum = if j == col { 1.0 } else { 0.0 };
                for l in j + 1..=col {
                    sum -= self.r(j, l) * inv[col * n + l];
                }
                inv[col * n + j] = sum / self.r(j, j);
            }
        }
        inv
    }
}

/// Least squares with full inference.
///
/// Coefficients come from a Householder QR of the design; standard errors
/// from the inverse triangular factor, scaled by the residual variance
/// RSS/(rows - columns); p-values are two-sided Student-t tails.
pub fn fit_ols(design: &DenseDesign, y: &[f64]) -> Result<FitResult, RegressionError> {
    check_lengths(design, y)?;
    let m = design.n_rows;
    let n = design.n_cols;
    if m <= n {
        return Err(RegressionError::TooFewRows { rows: m, cols: n });
    }
    let factors = QrFactors::factorize(design);
    let dependent = factors.dependent_columns();
    if !dependent.is_empty() {
        return Err(RegressionError::RankDeficient {
            columns: dependent
                .into_iter()
                .map(|j| design.labels[j].clone())
                .collect(),
        });
    }
    let mut qty = y.to_vec();
    factors.apply_qt(&mut qty);
    let coefficients = factors.solve_upper(&qty);

    // Residuals from the original data so fitted + residuals == y exactly.
    let mut residuals = y.to_vec();
    for j in 0..n {
        let col = design.col(j);
        let b = coefficients[j];
        if b != 0.0 {
            for i in 0..m {
                residuals[i] -= b * col[i];
            }
        }
    }
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let dof = (m - n) as i64;
    let sigma2 = rss / dof as f64;

    let r_inv = factors.invert_r();
    let mut std_errors = Vec::with_capacity(n);
    for j in 0..n {
        // (X'X)^-1 = R^-1 R^-T, so its diagonal is the squared row norm of R^-1.
        let row_norm2: f64 = (j..n).map(|k| r_inv[k * n + j].powi(2)).sum();
        std_errors.push((sigma2 * row_norm2).sqrt());
    }
    let t_stats: Vec<f64> = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| b / se)
        .collect();
    let p_values: Vec<f64> = t_stats
        .iter()
        .map(|&t| student_t_two_sided_p(t, dof as f64))
        .collect();

    let total = tss(y);
    let r_squared = if total > 0.0 { 1.0 - rss / total } else { 1.0 };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * (m as f64 - 1.0) / dof as f64;

    Ok(FitResult {
        column_labels: design.labels.clone(),
        coefficients,
        std_errors: Some(std_errors),
        t_stats: Some(t_stats),
        p_values: Some(p_values),
        residuals,
        sigma2_hat: Some(sigma2),
        r_squared: Some(r_squared),
        adj_r_squared: Some(adj_r_squared),
        mse: rss / m as f64,
        dof,
        lambda: 0.0,
        converged: true,
        sweeps: 0,
    })
}
