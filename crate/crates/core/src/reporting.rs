//! Analysis artifacts as plot-ready data files: starred coefficient tables,
//! histogram bins and QQ pairs for score distributions and residuals, and
//! regularization-path curves. Rendering is out of scope; every artifact is
//! a CSV or JSON file that round-trips through the readers in this module.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt_model::PromptModel;
use crate::regression::{qq_data, FitResult, LassoPath, RegressionError};
use crate::scoring::{ScoreTable, ScoringError};
use crate::shapley::{shapley_vs_first_order, ShapleyEstimate};

/// Bin count used when the caller does not choose one.
pub const DEFAULT_HIST_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("p-value {0} lies outside [0, 1]")]
    BadP(f64),
    #[error("histogram needs at least one value")]
    EmptyValues,
    #[error("histogram needs at least one bin")]
    BadBins,
    #[error("inputs disagree on the term universe: {0}")]
    UniverseMismatch(String),
    #[error("score table carries no baseline")]
    MissingBaseline,
    #[error("malformed report file: {0}")]
    Malformed(String),
    #[error("regression failure: {0}")]
    Regression(#[from] RegressionError),
    #[error("scoring failure: {0}")]
    Scoring(#[from] ScoringError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization failure: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Significance marker for a p-value: "***" below 0.0001, "**" below 0.005,
/// "*" below 0.05, empty otherwise.
pub fn significance_stars(p: f64) -> Result<&'static str, ReportError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ReportError::BadP(p));
    }
    Ok(if p < 0.0001 {
        "***"
    } else if p < 0.005 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    })
}

/// One equal-width histogram bin; the rightmost bin includes its right edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
}

/// Equal-width binning over [min, max]. A constant input collapses to a
/// single bin holding every value.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>, ReportError> {
    if values.is_empty() {
        return Err(ReportError::EmptyValues);
    }
    if bins == 0 {
        return Err(ReportError::BadBins);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(vec![HistogramBin {
            left: min,
            right: max,
            count: values.len() as u64,
        }]);
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: min + width * i as f64,
            right: if i + 1 == bins {
                max
            } else {
                min + width * (i + 1) as f64
            },
            count,
        })
        .collect())
}

/// One term of a starred coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub term: String,
    pub coefficient: f64,
    pub std_error: Option<f64>,
    pub p_value: Option<f64>,
    pub stars: String,
    pub tags: Vec<String>,
}

fn tags_for_term(model: Option<&PromptModel>, term: &str) -> Vec<String> {
    let Some(model) = model else {
        return Vec::new();
    };
    if term == "intercept" {
        return Vec::new();
    }
    let mut tags = Vec::new();
    for id in term.split('*') {
        if let Ok(component) = model.component(id) {
            for tag in &component.tags {
                if !tags.contains(tag) {
                    tags.push(tag.clone());
                }
            }
        }
    }
    tags
}

/// Rows for one fit, stars derived from each p-value where inference
/// exists. Component tags come from the model when one is supplied.
pub fn coefficient_rows(
    fit: &FitResult,
    model: Option<&PromptModel>,
) -> Result<Vec<CoefficientRow>, ReportError> {
    let mut rows = Vec::with_capacity(fit.column_labels.len());
    for (j, label) in fit.column_labels.iter().enumerate() {
        let p_value = fit.p_values.as_ref().map(|p| p[j]);
        let stars = match p_value {
            Some(p) => significance_stars(p)?.to_string(),
            None => String::new(),
        };
        rows.push(CoefficientRow {
            term: label.clone(),
            coefficient: fit.coefficients[j],
            std_error: fit.std_errors.as_ref().map(|s| s[j]),
            p_value,
            stars,
            tags: tags_for_term(model, label),
        });
    }
    Ok(rows)
}

/// One model's entry for one term of the aligned comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCell {
    pub coefficient: f64,
    pub std_error: Option<f64>,
    pub p_value: Option<f64>,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub term: String,
    pub tags: Vec<String>,
    /// Aligned with the table's model id order.
    pub cells: Vec<CoefficientCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub model_ids: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// One residual QQ point of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub model_id: String,
    pub theoretical: f64,
    pub sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adj_r_squared: Option<f64>,
    pub mse: f64,
    pub dof: i64,
    pub lambda: f64,
    pub converged: bool,
    pub qq_slope: f64,
    pub qq_intercept: f64,
    /// Pearson r between attribution values and first-order coefficients,
    /// absent when the two cannot be aligned.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shapley_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    /// P(correct token | query alone) shared by the run's records.
    pub baseline: f64,
    /// Mean of per-subprompt mean DCPMI values.
    pub mean_dcpmi: f64,
    pub n_subprompts: usize,
    pub models: BTreeMap<String, ModelSummary>,
}

/// Everything the report directory holds, kept in memory so tests can
/// verify that emitted files reproduce it field for field.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub coefficients: CoefficientTable,
    pub histogram: Vec<HistogramBin>,
    pub qq: Vec<QqRow>,
    pub path: LassoPath,
    pub summary: ReportSummary,
}

/// Assemble the full report: aligned coefficient tables over every fit,
/// the DCPMI histogram, per-model residual QQ data, the regularization
/// path, and summary statistics. All fits and the path must share one term
/// universe, and attribution estimates must match its first-order terms.
pub fn comparison_report(
    model: &PromptModel,
    fits: &BTreeMap<String, FitResult>,
    estimates: &[ShapleyEstimate],
    path: &LassoPath,
    table: &ScoreTable,
    bins: usize,
    manifest_hash: Option<String>,
) -> Result<ReportBundle, ReportError> {
    let mut ids = fits.keys();
    let Some(first_id) = ids.next() else {
        return Err(ReportError::UniverseMismatch("no fits supplied".into()));
    };
    let labels = &fits[first_id].column_labels;
    for (id, fit) in fits {
        if &fit.column_labels != labels {
            return Err(ReportError::UniverseMismatch(format!(
                "fit '{id}' disagrees with fit '{first_id}' on columns"
            )));
        }
    }
    if &path.column_labels != labels {
        return Err(ReportError::UniverseMismatch(
            "regularization path disagrees with the fits on columns".into(),
        ));
    }
    for estimate in estimates {
        if !labels.iter().any(|l| l == estimate.component_id()) {
            return Err(ReportError::UniverseMismatch(format!(
                "attribution component '{}' has no first-order column",
                estimate.component_id()
            )));
        }
    }

    let model_ids: Vec<String> = fits.keys().cloned().collect();
    let mut rows = Vec::with_capacity(labels.len());
    for (j, label) in labels.iter().enumerate() {
        let mut cells = Vec::with_capacity(model_ids.len());
        for id in &model_ids {
            let fit = &fits[id];
            let p_value = fit.p_values.as_ref().map(|p| p[j]);
            let stars = match p_value {
                Some(p) => significance_stars(p)?.to_string(),
                None => String::new(),
            };
            cells.push(CoefficientCell {
                coefficient: fit.coefficients[j],
                std_error: fit.std_errors.as_ref().map(|s| s[j]),
                p_value,
                stars,
            });
        }
        rows.push(ComparisonRow {
            term: label.clone(),
            tags: tags_for_term(Some(model), label),
            cells,
        });
    }

    // Per-subprompt mean DCPMI, keyed deterministically.
    let mut by_key: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    for record in table.records() {
        let entry = by_key.entry(&record.subprompt_key).or_insert((0.0, 0));
        entry.0 += record.dcpmi;
        entry.1 += 1;
    }
    let dcpmi_means: Vec<f64> = by_key
        .values()
        .map(|(sum, count)| sum / *count as f64)
        .collect();
    if dcpmi_means.is_empty() {
        return Err(ReportError::EmptyValues);
    }
    let baseline = table.baseline().ok_or(ReportError::MissingBaseline)?;
    let mean_dcpmi = dcpmi_means.iter().sum::<f64>() / dcpmi_means.len() as f64;
    let hist = histogram(&dcpmi_means, bins)?;

    let mut qq_rows = Vec::new();
    let mut model_summaries = BTreeMap::new();
    for (id, fit) in fits {
        let qq = qq_data(&fit.residuals)?;
        for &(theoretical, sample) in &qq.points {
            qq_rows.push(QqRow {
                model_id: id.clone(),
                theoretical,
                sample,
            });
        }
        model_summaries.insert(
            id.clone(),
            ModelSummary {
                r_squared: fit.r_squared,
                adj_r_squared: fit.adj_r_squared,
                mse: fit.mse,
                dof: fit.dof,
                lambda: fit.lambda,
                converged: fit.converged,
                qq_slope: qq.slope,
                qq_intercept: qq.intercept,
                shapley_correlation: shapley_vs_first_order(estimates, fit).ok(),
            },
        );
    }

    Ok(ReportBundle {
        coefficients: CoefficientTable {
            model_ids,
            rows,
        },
        histogram: hist,
        qq: qq_rows,
        path: path.clone(),
        summary: ReportSummary {
            manifest_hash,
            baseline,
            mean_dcpmi,
            n_subprompts: dcpmi_means.len(),
            models: model_summaries,
        },
    })
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v}")).unwrap_or_default()
}

fn parse_opt(cell: &str) -> Result<Option<f64>, ReportError> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|e| ReportError::Malformed(format!("bad float '{cell}': {e}")))
}

fn parse_req(cell: &str) -> Result<f64, ReportError> {
    cell.parse::<f64>()
        .map_err(|e| ReportError::Malformed(format!("bad float '{cell}': {e}")))
}

fn write_hash_line<W: Write>(mut writer: W, manifest_hash: Option<&str>) -> Result<(), ReportError> {
    if let Some(hash) = manifest_hash {
        writeln!(writer, "# manifest_hash={hash}")?;
    }
    Ok(())
}

/// Split a leading `# manifest_hash=` comment off a report CSV.
fn split_hash_line<R: Read>(reader: R) -> Result<(Option<String>, String), ReportError> {
    let mut buf = BufReader::new(reader);
    let mut first = String::new();
    buf.read_line(&mut first)?;
    let mut rest = String::new();
    buf.read_to_string(&mut rest)?;
    if let Some(hash) = first.trim_end().strip_prefix("# manifest_hash=") {
        Ok((Some(hash.to_string()), rest))
    } else {
        first.push_str(&rest);
        Ok((None, first))
    }
}

impl CoefficientTable {
    /// Columns: term, tags, then coef/std_error/p_value/stars per model.
    pub fn write_csv<W: Write>(
        &self,
        mut writer: W,
        manifest_hash: Option<&str>,
    ) -> Result<(), ReportError> {
        write_hash_line(&mut writer, manifest_hash)?;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["term".to_string(), "tags".to_string()];
        for id in &self.model_ids {
            header.push(format!("{id}:coefficient"));
            header.push(format!("{id}:std_error"));
            header.push(format!("{id}:p_value"));
            header.push(format!("{id}:stars"));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.term.clone(), row.tags.join(";")];
            for cell in &row.cells {
                record.push(format!("{}", cell.coefficient));
                record.push(fmt_opt(cell.std_error));
                record.push(fmt_opt(cell.p_value));
                record.push(cell.stars.clone());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<(Option<String>, Self), ReportError> {
        let (hash, body) = split_hash_line(reader)?;
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "term" || &header[1] != "tags" {
            return Err(ReportError::Malformed(
                "coefficient table header must start with term,tags".into(),
            ));
        }
        if (header.len() - 2) % 4 != 0 {
            return Err(ReportError::Malformed(
                "coefficient table must hold four columns per model".into(),
            ));
        }
        let mut model_ids = Vec::new();
        for group in (2..header.len()).step_by(4) {
            let id = header[group]
                .strip_suffix(":coefficient")
                .ok_or_else(|| {
                    ReportError::Malformed(format!("unexpected column '{}'", &header[group]))
                })?;
            model_ids.push(id.to_string());
        }
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let mut cells = Vec::new();
            for group in (2..record.len()).step_by(4) {
                cells.push(CoefficientCell {
                    coefficient: parse_req(&record[group])?,
                    std_error: parse_opt(&record[group + 1])?,
                    p_value: parse_opt(&record[group + 2])?,
                    stars: record[group + 3].to_string(),
                });
            }
            let tags = if record[1].is_empty() {
                Vec::new()
            } else {
                record[1].split(';').map(str::to_string).collect()
            };
            rows.push(ComparisonRow {
                term: record[0].to_string(),
                tags,
                cells,
            });
        }
        Ok((hash, CoefficientTable { model_ids, rows }))
    }
}

/// Write histogram bins as CSV: left, right, count.
pub fn write_histogram_csv<W: Write>(
    bins: &[HistogramBin],
    mut writer: W,
    manifest_hash: Option<&str>,
) -> Result<(), ReportError> {
    write_hash_line(&mut writer, manifest_hash)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["left", "right", "count"])?;
    for bin in bins {
        w.write_record([
            format!("{}", bin.left),
            format!("{}", bin.right),
            bin.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_histogram_csv<R: Read>(
    reader: R,
) -> Result<(Option<String>, Vec<HistogramBin>), ReportError> {
    let (hash, body) = split_hash_line(reader)?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let mut bins = Vec::new();
    for record in r.records() {
        let record = record?;
        bins.push(HistogramBin {
            left: parse_req(&record[0])?,
            right: parse_req(&record[1])?,
            count: record[2]
                .parse()
                .map_err(|e| ReportError::Malformed(format!("bad count: {e}")))?,
        });
    }
    Ok((hash, bins))
}

/// Write QQ rows as CSV: model_id, theoretical, sample.
pub fn write_qq_csv<W: Write>(
    rows: &[QqRow],
    mut writer: W,
    manifest_hash: Option<&str>,
) -> Result<(), ReportError> {
    write_hash_line(&mut writer, manifest_hash)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model_id", "theoretical", "sample"])?;
    for row in rows {
        w.write_record([
            row.model_id.clone(),
            format!("{}", row.theoretical),
            format!("{}", row.sample),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_qq_csv<R: Read>(reader: R) -> Result<(Option<String>, Vec<QqRow>), ReportError> {
    let (hash, body) = split_hash_line(reader)?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        rows.push(QqRow {
            model_id: record[0].to_string(),
            theoretical: parse_req(&record[1])?,
            sample: parse_req(&record[2])?,
        });
    }
    Ok((hash, rows))
}

/// The columns of a regularization-path CSV, as written by the path's own
/// export (which does not serialize column interaction orders or
/// convergence flags).
#[derive(Debug, Clone, PartialEq)]
pub struct PathCurves {
    pub lambdas: Vec<f64>,
    pub mse: Vec<f64>,
    pub norm_total: Vec<f64>,
    pub norms_by_order: Vec<Vec<f64>>,
    pub column_labels: Vec<String>,
    pub coefficients: Vec<Vec<f64>>,
}

impl PathCurves {
    pub fn from_path(path: &LassoPath) -> Self {
        PathCurves {
            lambdas: path.lambdas.clone(),
            mse: path.mse.clone(),
            norm_total: path.norm_total.clone(),
            norms_by_order: path.norms_by_order.clone(),
            column_labels: path.column_labels.clone(),
            coefficients: path.coefficients.clone(),
        }
    }
}

pub fn read_lasso_path_csv<R: Read>(
    reader: R,
) -> Result<(Option<String>, PathCurves), ReportError> {
    let (hash, body) = split_hash_line(reader)?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.clone();
    let mut order_cols = 0usize;
    let mut labels = Vec::new();
    for (i, name) in header.iter().enumerate() {
        match i {
            0 if name != "lambda" => {
                return Err(ReportError::Malformed("first column must be lambda".into()))
            }
            1 if name != "mse" => {
                return Err(ReportError::Malformed("second column must be mse".into()))
            }
            2 if name != "norm_total" => {
                return Err(ReportError::Malformed(
                    "third column must be norm_total".into(),
                ))
            }
            _ if i >= 3 => {
                if name.starts_with("norm_order_") {
                    order_cols += 1;
                } else if let Some(label) = name.strip_prefix("coef:") {
                    labels.push(label.to_string());
                } else {
                    return Err(ReportError::Malformed(format!("unexpected column '{name}'")));
                }
            }
            _ => {}
        }
    }
    let mut curves = PathCurves {
        lambdas: Vec::new(),
        mse: Vec::new(),
        norm_total: Vec::new(),
        norms_by_order: Vec::new(),
        column_labels: labels,
        coefficients: Vec::new(),
    };
    for record in r.records() {
        let record = record?;
        curves.lambdas.push(parse_req(&record[0])?);
        curves.mse.push(parse_req(&record[1])?);
        curves.norm_total.push(parse_req(&record[2])?);
        let mut norms = Vec::with_capacity(order_cols);
        for g in 0..order_cols {
            norms.push(parse_req(&record[3 + g])?);
        }
        curves.norms_by_order.push(norms);
        let mut coefs = Vec::with_capacity(curves.column_labels.len());
        for j in 0..curves.column_labels.len() {
            coefs.push(parse_req(&record[3 + order_cols + j])?);
        }
        curves.coefficients.push(coefs);
    }
    Ok((hash, curves))
}

impl ReportBundle {
    /// Write the fixed five files into `dir`, creating it if needed:
    /// coefficients.csv, dcpmi_hist.csv, qq.csv, lasso_path.csv,
    /// summary.json. The summary's manifest hash stamps every file.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir)?;
        let hash = self.summary.manifest_hash.as_deref();
        self.coefficients
            .write_csv(fs::File::create(dir.join("coefficients.csv"))?, hash)?;
        write_histogram_csv(
            &self.histogram,
            fs::File::create(dir.join("dcpmi_hist.csv"))?,
            hash,
        )?;
        write_qq_csv(&self.qq, fs::File::create(dir.join("qq.csv"))?, hash)?;
        self.path
            .write_csv(fs::File::create(dir.join("lasso_path.csv"))?, hash)
            .map_err(ReportError::Regression)?;
        let mut summary_file = fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(&mut summary_file, &self.summary)?;
        writeln!(summary_file)?;
        Ok(())
    }
}

pub fn read_summary_json<R: Read>(reader: R) -> Result<ReportSummary, ReportError> {
    Ok(serde_json::from_reader(reader)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{build_design_matrix, term_universe, DesignMatrix};
    use crate::prompt_model::ModelBuilder;
    use crate::regression::{fit_lasso, fit_ols, lasso_path};
    use crate::scoring::{ScoreKind, ScoreRecord};
    use crate::shapley::{shapley_values, FnValue};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn stars_follow_the_thresholds() {
        assert_eq!(significance_stars(0.00005).unwrap(), "***");
        assert_eq!(significance_stars(0.003).unwrap(), "**");
        assert_eq!(significance_stars(0.2).unwrap(), "");
        assert_eq!(significance_stars(0.0001).unwrap(), "**");
        assert_eq!(significance_stars(0.005).unwrap(), "*");
        assert_eq!(significance_stars(0.05).unwrap(), "");
        assert_eq!(significance_stars(0.0).unwrap(), "***");
        assert_eq!(significance_stars(1.0).unwrap(), "");
        assert!(matches!(
            significance_stars(-0.1),
            Err(ReportError::BadP(_))
        ));
        assert!(matches!(significance_stars(1.5), Err(ReportError::BadP(_))));
        assert!(matches!(
            significance_stars(f64::NAN),
            Err(ReportError::BadP(_))
        ));
    }

    #[test]
    fn histogram_hand_cases() {
        let bins = histogram(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].count, 2);
        assert_eq!(bins[1].count, 2);
        assert_eq!(bins[0].left, 0.0);
        assert_eq!(bins[1].right, 3.0);

        let constant = histogram(&[0.7, 0.7, 0.7], 10).unwrap();
        assert_eq!(constant.len(), 1);
        assert_eq!(constant[0].count, 3);
        assert_eq!(constant[0].left, 0.7);
        assert_eq!(constant[0].right, 0.7);

        assert!(matches!(histogram(&[], 5), Err(ReportError::EmptyValues)));
        assert!(matches!(histogram(&[1.0], 0), Err(ReportError::BadBins)));
    }

    #[test]
    fn histogram_conserves_counts_and_closes_the_last_bin() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let values: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..7.0)).collect();
        for bins in [1usize, 2, 7, 50] {
            let h = histogram(&values, bins).unwrap();
            assert_eq!(h.iter().map(|b| b.count).sum::<u64>(), 500, "bins {bins}");
        }
        // The maximum lands inside the final bin, not past it.
        let h = histogram(&[0.0, 0.5, 1.0], 2).unwrap();
        assert_eq!(h[1].count, 2);
    }

    fn small_setup() -> (
        crate::prompt_model::PromptModel,
        DesignMatrix,
        Vec<f64>,
        ScoreTable,
    ) {
        let model = ModelBuilder::new()
            .variable_stratum("x", &[("a", "alpha")])
            .variable_stratum("y", &[("b", "beta")])
            .variable_stratum("z", &[("c", "gamma")])
            .query("query", "q", "3+2=")
            .build()
            .unwrap();
        let subprompts = model.enumerate().unwrap();
        let terms = term_universe(&model, &[0, 1, 2], 2).unwrap();
        let design = build_design_matrix(&model, &subprompts, &terms, 2).unwrap();
        let weight = |id: &str| match id {
            "a" => 0.9,
            "b" => 0.5,
            _ => 0.0,
        };
        let mut table = ScoreTable::new("test", ScoreKind::Continuous);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut y = Vec::new();
        for sp in &subprompts {
            let value = 1.0
                + sp.active_pairs(&model)
                    .iter()
                    .map(|(_, id)| weight(id))
                    .sum::<f64>();
            for repeat in 0..2u32 {
                let noisy = value + 0.01 * rng.random_range(-1.0..1.0);
                y.push(noisy);
                table.insert(ScoreRecord {
                    scorer_id: "test".into(),
                    subprompt_key: sp.key().to_string(),
                    repeat,
                    raw: noisy * 0.38,
                    baseline: 0.38,
                    dcpmi: noisy,
                    binary: None,
                    timestamp: "2026-01-01T00:00:00Z".into(),
                });
            }
        }
        (model, design, y, table)
    }

    #[test]
    fn rows_carry_stars_and_tags() {
        let model = ModelBuilder::new()
            .variable_stratum_with(
                "x",
                vec![crate::prompt_model::ComponentSpec {
                    id: "a".into(),
                    text: "alpha".into(),
                    tags: vec!["positive".into()],
                }],
            )
            .variable_stratum("y", &[("b", "beta")])
            .query("query", "q", "3+2=")
            .build()
            .unwrap();
        let subprompts = model.enumerate().unwrap();
        let terms = term_universe(&model, &[0, 1], 2).unwrap();
        let design = build_design_matrix(&model, &subprompts, &terms, 4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let y: Vec<f64> = design
            .row_keys()
            .iter()
            .map(|(key, _)| {
                let a = f64::from(key.contains("0:a"));
                1.0 + 2.0 * a + 0.01 * rng.random_range(-1.0..1.0)
            })
            .collect();
        let fit = fit_ols(&design.to_dense(), &y).unwrap();
        let rows = coefficient_rows(&fit, Some(&model)).unwrap();
        assert_eq!(rows[0].term, "intercept");
        let a_row = rows.iter().find(|r| r.term == "a").unwrap();
        assert_eq!(a_row.tags, vec!["positive".to_string()]);
        assert_eq!(a_row.stars, "***");
        let pair_row = rows.iter().find(|r| r.term == "a*b").unwrap();
        assert_eq!(pair_row.tags, vec!["positive".to_string()]);
        for row in &rows {
            let expected = match row.p_value {
                Some(p) => significance_stars(p).unwrap(),
                None => "",
            };
            assert_eq!(row.stars, expected);
        }
        // A penalized fit has no inference, hence no stars.
        let lasso = fit_lasso(&design.to_dense(), &y, 0.05).unwrap();
        let rows = coefficient_rows(&lasso, Some(&model)).unwrap();
        assert!(rows.iter().all(|r| r.std_error.is_none()
            && r.p_value.is_none()
            && r.stars.is_empty()));
    }

    fn build_bundle() -> (ReportBundle, BTreeMap<String, FitResult>) {
        let (model, design, y, table) = small_setup();
        let dense = design.to_dense();
        let ols = fit_ols(&dense, &y).unwrap();
        let lasso = fit_lasso(&dense, &y, 0.01).unwrap();
        let mut fits = BTreeMap::new();
        fits.insert("ols".to_string(), ols);
        fits.insert("lasso".to_string(), lasso);
        let orders: Vec<usize> = std::iter::once(0)
            .chain(design.terms().iter().map(|t| t.order()))
            .collect();
        let path = lasso_path(&dense, &y, &[0.005, 0.01, 0.02], &orders).unwrap();
        let weight = |id: &str| match id {
            "a" => 0.9,
            "b" => 0.5,
            _ => 0.0,
        };
        let fv = FnValue(move |c: &[(usize, &str)]| {
            1.0 + c.iter().map(|(_, id)| weight(id)).sum::<f64>()
        });
        let estimates = shapley_values(&fv, &model).unwrap();
        let bundle = comparison_report(
            &model,
            &fits,
            &estimates,
            &path,
            &table,
            DEFAULT_HIST_BINS,
            Some("a1b2c3".to_string()),
        )
        .unwrap();
        (bundle, fits)
    }

    #[test]
    fn report_aligns_models_and_summarizes_scores() {
        let (bundle, fits) = build_bundle();
        assert_eq!(bundle.coefficients.model_ids, vec!["lasso", "ols"]);
        // One row per universe column: intercept + 3 + 3.
        assert_eq!(bundle.coefficients.rows.len(), 7);
        assert_eq!(bundle.coefficients.rows[0].term, "intercept");
        // Histogram counts cover all 8 subprompts.
        let total: u64 = bundle.histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, 8);
        assert_eq!(bundle.summary.n_subprompts, 8);
        assert!((bundle.summary.baseline - 0.38).abs() < 1e-12);
        // Mean DCPMI equals the direct average over per-subprompt means:
        // each weighted component is active in half the subprompts.
        assert!((bundle.summary.mean_dcpmi - 1.7).abs() < 0.05);
        // QQ rows exist for both models.
        assert!(bundle.qq.iter().any(|r| r.model_id == "ols"));
        assert!(bundle.qq.iter().any(|r| r.model_id == "lasso"));
        let ols_summary = &bundle.summary.models["ols"];
        assert!(ols_summary.r_squared.unwrap() > 0.99);
        assert!(ols_summary.shapley_correlation.unwrap() > 0.99);
        let _ = fits;
    }

    #[test]
    fn identical_fits_produce_identical_columns() {
        let (model, design, y, table) = small_setup();
        let dense = design.to_dense();
        let fit = fit_ols(&dense, &y).unwrap();
        let mut fits = BTreeMap::new();
        fits.insert("m1".to_string(), fit.clone());
        fits.insert("m2".to_string(), fit);
        let orders: Vec<usize> = std::iter::once(0)
            .chain(design.terms().iter().map(|t| t.order()))
            .collect();
        let path = lasso_path(&dense, &y, &[0.01], &orders).unwrap();
        let estimates = shapley_values(
            &FnValue(|c: &[(usize, &str)]| c.len() as f64),
            &model,
        )
        .unwrap();
        let bundle = comparison_report(
            &model, &fits, &estimates, &path, &table, 10, None,
        )
        .unwrap();
        for row in &bundle.coefficients.rows {
            assert_eq!(row.cells[0], row.cells[1]);
        }
    }

    #[test]
    fn universe_mismatch_is_rejected() {
        let (model, design, y, table) = small_setup();
        let dense = design.to_dense();
        let full = fit_ols(&dense, &y).unwrap();
        let smaller = fit_ols(&design.to_dense_subset(&[0, 1]), &y).unwrap();
        let mut fits = BTreeMap::new();
        fits.insert("full".to_string(), full);
        fits.insert("small".to_string(), smaller);
        let orders: Vec<usize> = std::iter::once(0)
            .chain(design.terms().iter().map(|t| t.order()))
            .collect();
        let path = lasso_path(&dense, &y, &[0.01], &orders).unwrap();
        let estimates = shapley_values(
            &FnValue(|c: &[(usize, &str)]| c.len() as f64),
            &model,
        )
        .unwrap();
        assert!(matches!(
            comparison_report(&model, &fits, &estimates, &path, &table, 10, None),
            Err(ReportError::UniverseMismatch(_))
        ));
    }

    #[test]
    fn bundle_files_round_trip() {
        let (bundle, _) = build_bundle();
        let dir = tempfile::tempdir().unwrap();
        bundle.write_dir(dir.path()).unwrap();

        let (hash, table) =
            CoefficientTable::read_csv(fs::File::open(dir.path().join("coefficients.csv")).unwrap())
                .unwrap();
        assert_eq!(hash.as_deref(), Some("a1b2c3"));
        assert_eq!(table, bundle.coefficients);

        let (hash, hist) =
            read_histogram_csv(fs::File::open(dir.path().join("dcpmi_hist.csv")).unwrap()).unwrap();
        assert_eq!(hash.as_deref(), Some("a1b2c3"));
        assert_eq!(hist, bundle.histogram);

        let (hash, qq) =
            read_qq_csv(fs::File::open(dir.path().join("qq.csv")).unwrap()).unwrap();
        assert_eq!(hash.as_deref(), Some("a1b2c3"));
        assert_eq!(qq, bundle.qq);

        let (hash, curves) =
            read_lasso_path_csv(fs::File::open(dir.path().join("lasso_path.csv")).unwrap())
                .unwrap();
        assert_eq!(hash.as_deref(), Some("a1b2c3"));
        assert_eq!(curves, PathCurves::from_path(&bundle.path));

        let summary =
            read_summary_json(fs::File::open(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary, bundle.summary);
    }

    #[test]
    fn paper_shaped_bundle_lists_every_component_row() {
        let model = crate::test_fixtures::arithmetic_like_model();
        let subprompts = model.enumerate().unwrap();
        let terms = term_universe(&model, &[], 1).unwrap();
        let design = build_design_matrix(&model, &subprompts, &terms, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut table = ScoreTable::new("test", ScoreKind::Continuous);
        let mut y = Vec::new();
        for sp in &subprompts {
            let actives = sp.active_pairs(&model).len() as f64;
            let value = 1.0 + 0.1 * actives + 0.01 * rng.random_range(-1.0..1.0);
            y.push(value);
            table.insert(ScoreRecord {
                scorer_id: "test".into(),
                subprompt_key: sp.key().to_string(),
                repeat: 0,
                raw: value * 0.38,
                baseline: 0.38,
                dcpmi: value,
                binary: None,
                timestamp: "2026-01-01T00:00:00Z".into(),
            });
        }
        let dense = design.to_dense();
        let fit = fit_ols(&dense, &y).unwrap();
        let mut fits = BTreeMap::new();
        fits.insert("demo".to_string(), fit);
        let orders: Vec<usize> = std::iter::once(0)
            .chain(design.terms().iter().map(|t| t.order()))
            .collect();
        let path = lasso_path(&dense, &y, &[0.01], &orders).unwrap();
        let estimates = shapley_values(
            &FnValue(|c: &[(usize, &str)]| 0.1 * c.len() as f64),
            &model,
        )
        .unwrap();
        let bundle = comparison_report(
            &model, &fits, &estimates, &path, &table, DEFAULT_HIST_BINS, None,
        )
        .unwrap();
        // 17 component rows plus the intercept.
        assert_eq!(bundle.coefficients.rows.len(), 18);
        assert_eq!(bundle.summary.n_subprompts, 8192);
        let total: u64 = bundle.histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, 8192);
    }
}
