//! Fit diagnostics: Pearson correlation between observed and fitted values,
//! and normal quantile-quantile data for residual inspection.

use super::special::normal_quantile;
use super::RegressionError;

/// Sample Pearson correlation between two equal-length vectors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, RegressionError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(RegressionError::BadVectors {
            a: a.len(),
            b: b.len(),
        });
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let da = x - mean_a;
        let db = y - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 {
        return Err(RegressionError::ZeroVariance("first"));
    }
    if var_b == 0.0 {
        return Err(RegressionError::ZeroVariance("second"));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// Quantile-quantile data for residuals against the standard normal.
#[derive(Debug, Clone)]
pub struct QqData {
    /// (theoretical quantile, ordered standardized residual) pairs.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of sample on theoretical quantiles.
    pub slope: f64,
    /// Least-squares intercept of the same line.
    pub intercept: f64,
}

/// Standardize residuals by their sample mean and standard deviation
/// (n − 1 divisor), sort ascending, and pair the i-th order statistic with
/// the normal quantile at probability (i − 0.5)/n. The fitted line
/// summarizes how closely the points track the identity.
pub fn qq_data(residuals: &[f64]) -> Result<QqData, RegressionError> {
    let n = residuals.len();
    if n < 3 {
        return Err(RegressionError::TooFewResiduals(n));
    }
    let nf = n as f64;
    let mean = residuals.iter().sum::<f64>() / nf;
    let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Err(RegressionError::ZeroVariance("residuals"));
    }
    let sd = var.sqrt();
    let mut ordered: Vec<f64> = residuals.iter().map(|r| (r - mean) / sd).collect();
    ordered.sort_by(|a, b| a.partial_cmp(b).expect("residuals must not be NaN"));
    let points: Vec<(f64, f64)> = ordered
        .into_iter()
        .enumerate()
        .map(|(i, r)| (normal_quantile((i as f64 + 0.5) / nf), r))
        .collect();
    // Least-squares line of sample quantiles on theoretical quantiles.
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_s = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut var_t = 0.0;
    for &(t, s) in &points {
        cov += (t - mean_t) * (s - mean_s);
        var_t += (t - mean_t) * (t - mean_t);
    }
    let slope = cov / var_t;
    let intercept = mean_s - slope * mean_t;
    Ok(QqData {
        points,
        slope,
        intercept,
    })
}
