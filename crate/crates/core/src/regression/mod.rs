//! Regression machinery: ordinary least squares with full inference,
//! L1-regularized linear and logistic fits by coordinate descent, the
//! regularization path, and correlation/QQ diagnostics.
//!
//! All fits consume a [`DenseDesign`](crate::encoding::DenseDesign) whose
//! column 0 is the intercept; the intercept is never penalized. Fitting is
//! single-threaded and deterministic: coordinates are visited in a fixed
//! cyclic order, so identical inputs give identical results.

mod diagnostics;
mod lasso;
mod logistic;
mod ols;
pub mod special;

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub use diagnostics::{pearson, qq_data, QqData};
pub use lasso::{
    fit_lasso, fit_lasso_warm, lambda_grid, lasso_kkt_check, lasso_lambda_max, lasso_path,
    KktReport, LassoPath,
};
pub use logistic::{fit_logistic, logistic_gradient, logistic_nll, logistic_objective};
pub use ols::fit_ols;

/// Sweep-to-sweep coefficient tolerance for coordinate descent.
pub const CD_TOL: f64 = 1e-8;
/// Hard cap on coordinate-descent sweeps.
pub const CD_MAX_SWEEPS: u64 = 100_000;
/// Objective-decrease tolerance for the logistic outer loop.
pub const LOGISTIC_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("design has {rows} rows and {cols} columns; inference needs rows > columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("response has {y_len} entries but the design has {rows} rows")]
    LengthMismatch { y_len: usize, rows: usize },
    #[error("rank deficiency: columns [{}] are linearly dependent on earlier columns", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("lambda must be finite and nonnegative, got {0}")]
    BadLambda(f64),
    #[error("bad lambda grid: {0}")]
    BadGrid(String),
    #[error("column order list has {got} entries but the design has {expected} columns")]
    BadOrders { got: usize, expected: usize },
    #[error("logistic response must be 0 or 1; found {value} at row {row}")]
    NotBinary { value: f64, row: usize },
    #[error("vectors must have equal lengths of at least 2 (got {a} and {b})")]
    BadVectors { a: usize, b: usize },
    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),
    #[error("need at least 3 residuals, got {0}")]
    TooFewResiduals(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
}

/// A fitted linear or logistic model over labeled design columns.
///
/// Inference fields (`std_errors`, `t_stats`, `p_values`, `sigma2_hat`) are
/// present only for unpenalized least squares. For logistic fits `mse` holds
/// the final penalized objective (average negative log-likelihood plus
/// penalty) and the r-squared fields are absent.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub column_labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    pub t_stats: Option<Vec<f64>>,
    pub p_values: Option<Vec<f64>>,
    /// One residual per design row: `y - fitted` (for logistic, `y - p`).
    pub residuals: Vec<f64>,
    pub sigma2_hat: Option<f64>,
    pub r_squared: Option<f64>,
    pub adj_r_squared: Option<f64>,
    pub mse: f64,
    /// rows - columns; may be nonpositive for penalized fits.
    pub dof: i64,
    pub lambda: f64,
    pub converged: bool,
    pub sweeps: u64,
}

impl FitResult {
    /// Coefficient looked up by column label.
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.column_labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.coefficients[i])
    }

    fn labeled(&self, values: &[f64]) -> BTreeMap<String, f64> {
        self.column_labels
            .iter()
            .cloned()
            .zip(values.iter().copied())
            .collect()
    }

    /// JSON export: per-column values keyed by label, plus scalar summaries.
    /// Deterministic (sorted maps), so identical fits serialize identically.
    pub fn write_json<W: Write>(
        &self,
        writer: W,
        manifest_hash: Option<&str>,
    ) -> Result<(), RegressionError> {
        #[derive(Serialize)]
        struct Export<'a> {
            #[serde(skip_serializing_if = "Option::is_none")]
            manifest_hash: Option<&'a str>,
            column_labels: &'a [String],
            coefficients: BTreeMap<String, f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            std_errors: Option<BTreeMap<String, f64>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            t_stats: Option<BTreeMap<String, f64>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            p_values: Option<BTreeMap<String, f64>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            sigma2_hat: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            r_squared: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            adj_r_squared: Option<f64>,
            mse: f64,
            dof: i64,
            lambda: f64,
            converged: bool,
            sweeps: u64,
            n_rows: usize,
        }
        let export = Export {
            manifest_hash,
            column_labels: &self.column_labels,
            coefficients: self.labeled(&self.coefficients),
            std_errors: self.std_errors.as_deref().map(|v| self.labeled(v)),
            t_stats: self.t_stats.as_deref().map(|v| self.labeled(v)),
            p_values: self.p_values.as_deref().map(|v| self.labeled(v)),
            sigma2_hat: self.sigma2_hat,
            r_squared: self.r_squared,
            adj_r_squared: self.adj_r_squared,
            mse: self.mse,
            dof: self.dof,
            lambda: self.lambda,
            converged: self.converged,
            sweeps: self.sweeps,
            n_rows: self.residuals.len(),
        };
        let mut writer = writer;
        serde_json::to_writer_pretty(&mut writer, &export)
            .map_err(|e| RegressionError::Io(e.into()))?;
        writer.write_all(b"\n")?;
        Ok(())
    }
}

pub(crate) fn check_lengths(
    design: &crate::encoding::DenseDesign,
    y: &[f64],
) -> Result<(), RegressionError> {
    if y.len() != design.n_rows {
        return Err(RegressionError::LengthMismatch {
            y_len: y.len(),
            rows: design.n_rows,
        });
    }
    Ok(())
}

/// Total sum of squares around the mean.
pub(crate) fn tss(y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - mean) * (v - mean)).sum()
}
