//! Run-manifest plumbing: one JSON manifest names the model file, scorer,
//! term universe, fit family, selection policy, output directory, and seed,
//! and each pipeline stage reads it, writes fixed-name artifacts under the
//! output directory, and stamps every artifact with the manifest hash so
//! files from different runs can never be mixed silently.
//!
//! Stage order: `score` persists the score store; `fit`, `path`, `select`,
//! `shapley`, and `report` all re-derive their inputs from that store, so
//! refits are cheap and deterministic while scoring happens once.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::{build_design_matrix, term_universe, EncodingError, TermDescriptor};
use crate::prompt_model::{ModelError, PromptModel, StratumKind};
use crate::regression::{
    fit_lasso, fit_logistic, fit_ols, lambda_grid, lasso_path, FitResult, LassoPath,
    RegressionError,
};
use crate::reporting::{comparison_report, ReportError, DEFAULT_HIST_BINS};
use crate::scorer_backends::{
    BinaryEndpointScorer, EndpointClient, EndpointConfig, EndpointScorer, HttpTransport,
    ReplayTransport,
};
use crate::scoring::{
    score_all, FitTarget, ScoreKind, ScoreStore, ScoreTable, Scorer, ScoringError,
    SyntheticOracle, SyntheticWeights,
};
use crate::selection::{forward_select, SelectionConfig, SelectionError};
use crate::shapley::{
    shapley_values, write_shapley_csv, write_shapley_json, ShapleyError, ShapleyEstimate,
    TableValue,
};

/// Verbatim copy of the manifest inside the output directory.
pub const MANIFEST_COPY_FILE: &str = "manifest.json";
/// Append-only score store.
pub const SCORES_FILE: &str = "scores.jsonl";
/// Regularization path export.
pub const PATH_FILE: &str = "lasso_path.csv";
/// Forward-selection audit trace.
pub const TRACE_FILE: &str = "selection_trace.jsonl";
/// Refit over the selected terms.
pub const SELECTED_FIT_FILE: &str = "fit_selected.json";
/// Attribution estimates, tabular form.
pub const SHAPLEY_CSV_FILE: &str = "shapley.csv";
/// Attribution estimates, full form.
pub const SHAPLEY_JSON_FILE: &str = "shapley.json";
/// Report bundle directory.
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest parse failed for {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("manifest references missing file: {0}")]
    MissingFile(PathBuf),
    #[error("manifest field `{field}` {message}")]
    ManifestField { field: &'static str, message: String },
    #[error("artifact `{artifact}` is missing from {}; run the `{command}` command first", .dir.display())]
    UpstreamMissing {
        artifact: &'static str,
        dir: PathBuf,
        command: &'static str,
    },
    #[error("output directory {} already holds artifacts from a different manifest", .0.display())]
    ForeignOutputDir(PathBuf),
    #[error("score store holds no records for scorer `{scorer_id}`; run the `score` command first")]
    EmptyScores { scorer_id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Shapley(#[from] ShapleyError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One requested weight of the synthetic oracle: the listed components must
/// be simultaneously active for `weight` to contribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub components: Vec<String>,
    pub weight: f64,
}

/// Which scorer the run uses. The endpoint credential is named by
/// `config.api_key_env` and read from the environment at request time; it
/// never appears in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    Synthetic {
        intercept: f64,
        #[serde(default)]
        weights: Vec<WeightSpec>,
        #[serde(default)]
        noise_sd: f64,
        #[serde(default)]
        binary: bool,
    },
    Endpoint {
        config: EndpointConfig,
        #[serde(default)]
        binary: bool,
        #[serde(default = "default_concurrency")]
        concurrency: usize,
    },
    Replay {
        fixtures: PathBuf,
        config: EndpointConfig,
        #[serde(default)]
        binary: bool,
    },
}

fn default_concurrency() -> usize {
    1
}

impl ScorerSpec {
    /// The scorer id records will carry, predictable without constructing
    /// the scorer. Replay reuses the endpoint id so a replayed run can
    /// extend a live store.
    pub fn expected_id(&self, seed: u64) -> String {
        match self {
            ScorerSpec::Synthetic { binary: false, .. } => format!("synthetic:{seed}"),
            ScorerSpec::Synthetic { binary: true, .. } => format!("synthetic-binary:{seed}"),
            ScorerSpec::Endpoint {
                config,
                binary,
                ..
            }
            | ScorerSpec::Replay {
                config, binary, ..
            } => {
                if *binary {
                    format!("endpoint-binary:{}", config.model_name)
                } else {
                    format!("endpoint:{}", config.model_name)
                }
            }
        }
    }

    pub fn score_kind(&self) -> ScoreKind {
        let binary = match self {
            ScorerSpec::Synthetic { binary, .. }
            | ScorerSpec::Endpoint { binary, .. }
            | ScorerSpec::Replay { binary, .. } => *binary,
        };
        if binary {
            ScoreKind::Binary
        } else {
            ScoreKind::Continuous
        }
    }

    fn concurrency(&self) -> usize {
        match self {
            ScorerSpec::Endpoint { concurrency, .. } => (*concurrency).max(1),
            _ => 1,
        }
    }
}

/// Term universe: which strata may interact and up to which order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    #[serde(default)]
    pub interaction_strata: Vec<usize>,
    pub max_order: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

/// Model family of the single-fit command. The path command draws its grid
/// from `FitSpec::grid` instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    Ols,
    Lasso {
        lambda: f64,
    },
    Logistic {
        #[serde(default)]
        lambda: f64,
    },
}

impl FitFamily {
    pub fn file_name(&self) -> &'static str {
        match self {
            FitFamily::Ols => "fit_ols.json",
            FitFamily::Lasso { .. } => "fit_lasso.json",
            FitFamily::Logistic { .. } => "fit_logistic.json",
        }
    }

    fn report_key(&self) -> &'static str {
        match self {
            FitFamily::Ols => "ols",
            FitFamily::Lasso { .. } => "lasso",
            FitFamily::Logistic { .. } => "logistic",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub family: FitFamily,
    #[serde(default = "default_target")]
    pub target: FitTarget,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

fn default_target() -> FitTarget {
    FitTarget::Dcpmi
}

fn default_repeats() -> u32 {
    1
}

/// The run description every command consumes. The seed is mandatory: all
/// stochastic behavior in a run derives from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub model_file: PathBuf,
    pub scorer: ScorerSpec,
    pub terms: TermSpec,
    pub fit: FitSpec,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

/// A parsed manifest plus its provenance: the SHA-256 of the manifest file
/// bytes (hex) and the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: RunManifest,
    pub hash: String,
    raw: Vec<u8>,
    base_dir: PathBuf,
}

impl LoadedManifest {
    /// Build from an in-memory manifest, e.g. after command-line overrides.
    /// The canonical pretty JSON of `manifest` becomes the provenance
    /// bytes: its hash stamps artifacts and its text is copied into the
    /// output directory. Relative paths resolve against `base_dir`.
    pub fn from_value(
        manifest: RunManifest,
        base_dir: PathBuf,
    ) -> Result<Self, PipelineError> {
        let mut raw = serde_json::to_vec_pretty(&manifest).map_err(|e| {
            PipelineError::ManifestParse {
                path: PathBuf::from("<overridden manifest>"),
                message: e.to_string(),
            }
        })?;
        raw.push(b'\n');
        let hash = hex_digest(&raw);
        let loaded = LoadedManifest {
            manifest,
            hash,
            raw,
            base_dir,
        };
        loaded.check_inputs()?;
        Ok(loaded)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    fn check_inputs(&self) -> Result<(), PipelineError> {
        let model_path = self.model_path();
        if !model_path.is_file() {
            return Err(PipelineError::MissingFile(model_path));
        }
        if let ScorerSpec::Replay { fixtures, .. } = &self.manifest.scorer {
            let fixtures = self.resolve(fixtures);
            if !fixtures.is_file() {
                return Err(PipelineError::MissingFile(fixtures));
            }
        }
        if let Some(config) = &self.manifest.selection {
            config.validate()?;
        }
        Ok(())
    }

    /// Resolve a manifest-relative input path against the manifest's
    /// directory, so a manifest can ship beside its model and fixtures.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.resolve(&self.manifest.model_file)
    }

    /// The output directory. Unlike input files, a relative `out_dir`
    /// resolves against the working directory: runs started from a shipped
    /// read-only manifest land beside the caller, not beside the manifest.
    pub fn out_path(&self) -> PathBuf {
        self.manifest.out_dir.clone()
    }
}

/// Read, hash, parse, and validate a manifest file. Every referenced input
/// file must exist before any stage runs.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<LoadedManifest, PipelineError> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|_| PipelineError::MissingFile(path.to_path_buf()))?;
    let hash = hex_digest(&raw);
    let manifest: RunManifest =
        serde_json::from_slice(&raw).map_err(|e| PipelineError::ManifestParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let loaded = LoadedManifest {
        manifest,
        hash,
        raw,
        base_dir,
    };
    loaded.check_inputs()?;
    Ok(loaded)
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Create the output directory and place the verbatim manifest copy in it.
/// A directory already initialized from different manifest bytes is
/// refused: artifacts from two manifests must never share a directory.
fn prepare_out(loaded: &LoadedManifest) -> Result<PathBuf, PipelineError> {
    let out = loaded.out_path();
    fs::create_dir_all(&out)?;
    let copy = out.join(MANIFEST_COPY_FILE);
    if copy.exists() {
        if fs::read(&copy)? != loaded.raw {
            return Err(PipelineError::ForeignOutputDir(out));
        }
    } else {
        fs::write(&copy, &loaded.raw)?;
    }
    Ok(out)
}

/// Per-stratum line of the validation diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct StratumDiagnostics {
    pub index: usize,
    pub name: String,
    pub kind: StratumKind,
    pub components: usize,
    /// Choices this stratum contributes to the enumeration (components + 1
    /// for a variable stratum's empty choice, 1 for a static stratum).
    pub choices: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelDiagnostics {
    pub strata: usize,
    pub variable_strata: usize,
    pub variable_components: usize,
    pub query_stratum: usize,
    pub separator: String,
    pub subprompts: u128,
    pub per_stratum: Vec<StratumDiagnostics>,
}

/// Load a model file and summarize its shape.
pub fn cmd_validate(model_file: impl AsRef<Path>) -> Result<ModelDiagnostics, PipelineError> {
    let model = PromptModel::from_file(model_file)?;
    let per_stratum = model
        .strata()
        .iter()
        .map(|s| StratumDiagnostics {
            index: s.index,
            name: s.name.clone(),
            kind: s.kind,
            components: s.component_count(),
            choices: if s.is_variable() {
                s.component_count() as u64 + 1
            } else {
                1
            },
        })
        .collect();
    Ok(ModelDiagnostics {
        strata: model.strata().len(),
        variable_strata: model.variable_strata().len(),
        variable_components: model.variable_components().count(),
        query_stratum: model.query_stratum(),
        separator: model.separator().to_string(),
        subprompts: model.subprompt_count(),
        per_stratum,
    })
}

/// Write one subprompt key per line followed by a final line holding the
/// bare count, and return the count.
pub fn cmd_enumerate<W: Write>(
    model_file: impl AsRef<Path>,
    mut writer: W,
) -> Result<u128, PipelineError> {
    let model = PromptModel::from_file(model_file)?;
    let subprompts = model.enumerate()?;
    for sub in &subprompts {
        writeln!(writer, "{}", sub.key())?;
    }
    writeln!(writer, "{}", subprompts.len())?;
    Ok(subprompts.len() as u128)
}

fn build_scorer(
    loaded: &LoadedManifest,
    model: &PromptModel,
) -> Result<Box<dyn Scorer>, PipelineError> {
    match &loaded.manifest.scorer {
        ScorerSpec::Synthetic {
            intercept,
            weights,
            noise_sd,
            binary,
        } => {
            let mut terms = Vec::with_capacity(weights.len());
            for spec in weights {
                let ids: Vec<&str> = spec.components.iter().map(String::as_str).collect();
                terms.push((TermDescriptor::new(model, &ids)?, spec.weight));
            }
            let weights = SyntheticWeights {
                intercept: *intercept,
                terms,
            };
            let seed = loaded.manifest.seed;
            let oracle = if *binary {
                SyntheticOracle::binary(model.clone(), &weights, *noise_sd, seed)?
            } else {
                SyntheticOracle::continuous(model.clone(), &weights, *noise_sd, seed)?
            };
            Ok(Box::new(oracle))
        }
        ScorerSpec::Endpoint { config, binary, .. } => {
            let transport = HttpTransport::new(config.timeout()).map_err(ScoringError::from)?;
            let client = EndpointClient::new(config.clone(), transport);
            if *binary {
                Ok(Box::new(BinaryEndpointScorer::new(client)))
            } else {
                Ok(Box::new(EndpointScorer::new(client)))
            }
        }
        ScorerSpec::Replay {
            fixtures,
            config,
            binary,
        } => {
            let transport = ReplayTransport::load(loaded.resolve(fixtures))
                .map_err(ScoringError::from)?;
            let client = EndpointClient::new(config.clone(), transport);
            if *binary {
                Ok(Box::new(BinaryEndpointScorer::new(client)))
            } else {
                Ok(Box::new(EndpointScorer::new(client)))
            }
        }
    }
}

/// Score every missing (subprompt, repeat) pair into the bound store.
/// Re-running with unchanged inputs appends nothing.
pub fn cmd_score(loaded: &LoadedManifest) -> Result<ScoreTable, PipelineError> {
    let out = prepare_out(loaded)?;
    let model = PromptModel::from_file(loaded.model_path())?;
    let subprompts = model.enumerate()?;
    let scorer = build_scorer(loaded, &model)?;
    let mut store = ScoreStore::open_bound(out.join(SCORES_FILE), &loaded.hash)?;
    let table = score_all(
        scorer.as_ref(),
        &subprompts,
        model.query_text(),
        loaded.manifest.fit.repeats,
        loaded.manifest.scorer.concurrency(),
        &mut store,
    )?;
    Ok(table)
}

/// Everything the downstream fitting stages share, derived from the model
/// file and the persisted score store.
pub struct StageInputs {
    pub model: PromptModel,
    pub terms: Vec<TermDescriptor>,
    pub design: crate::encoding::DesignMatrix,
    pub table: ScoreTable,
    pub y: Vec<f64>,
}

fn load_table(loaded: &LoadedManifest, out: &Path) -> Result<ScoreTable, PipelineError> {
    let scores = out.join(SCORES_FILE);
    if !scores.is_file() {
        return Err(PipelineError::UpstreamMissing {
            artifact: SCORES_FILE,
            dir: out.to_path_buf(),
            command: "score",
        });
    }
    let store = ScoreStore::open_bound(&scores, &loaded.hash)?;
    let scorer_id = loaded.manifest.scorer.expected_id(loaded.manifest.seed);
    let table = ScoreTable::from_store(&store, &scorer_id, loaded.manifest.scorer.score_kind());
    if table.is_empty() {
        return Err(PipelineError::EmptyScores { scorer_id });
    }
    Ok(table)
}

fn stage_inputs(loaded: &LoadedManifest, out: &Path) -> Result<StageInputs, PipelineError> {
    let table = load_table(loaded, out)?;
    let model = PromptModel::from_file(loaded.model_path())?;
    let subprompts = model.enumerate()?;
    let terms = term_universe(
        &model,
        &loaded.manifest.terms.interaction_strata,
        loaded.manifest.terms.max_order,
    )?;
    let design = build_design_matrix(&model, &subprompts, &terms, loaded.manifest.fit.repeats)?;
    let y = table.response_vector(design.row_keys(), loaded.manifest.fit.target)?;
    Ok(StageInputs {
        model,
        terms,
        design,
        table,
        y,
    })
}

fn fit_family(
    family: &FitFamily,
    inputs: &StageInputs,
) -> Result<FitResult, PipelineError> {
    let dense = inputs.design.to_dense();
    let fit = match family {
        FitFamily::Ols => fit_ols(&dense, &inputs.y)?,
        FitFamily::Lasso { lambda } => fit_lasso(&dense, &inputs.y, *lambda)?,
        FitFamily::Logistic { lambda } => fit_logistic(&dense, &inputs.y, *lambda)?,
    };
    Ok(fit)
}

/// Fit the manifest's family over the full term universe and write its
/// JSON export. Deterministic: rerunning produces byte-identical output.
pub fn cmd_fit(loaded: &LoadedManifest) -> Result<PathBuf, PipelineError> {
    let out = prepare_out(loaded)?;
    let inputs = stage_inputs(loaded, &out)?;
    let fit = fit_family(&loaded.manifest.fit.family, &inputs)?;
    let path = out.join(loaded.manifest.fit.family.file_name());
    fit.write_json(fs::File::create(&path)?, Some(&loaded.hash))?;
    Ok(path)
}

fn grid_lambdas(loaded: &LoadedManifest) -> Result<Vec<f64>, PipelineError> {
    let grid = loaded
        .manifest
        .fit
        .grid
        .ok_or(PipelineError::ManifestField {
            field: "fit.grid",
            message: "is required by this command".into(),
        })?;
    Ok(lambda_grid(grid.lo, grid.hi, grid.step)?)
}

fn compute_path(
    loaded: &LoadedManifest,
    inputs: &StageInputs,
) -> Result<LassoPath, PipelineError> {
    let lambdas = grid_lambdas(loaded)?;
    let orders: Vec<usize> = std::iter::once(0)
        .chain(inputs.terms.iter().map(TermDescriptor::order))
        .collect();
    Ok(lasso_path(
        &inputs.design.to_dense(),
        &inputs.y,
        &lambdas,
        &orders,
    )?)
}

/// Trace the regularization path over the manifest grid and write its CSV.
pub fn cmd_path(loaded: &LoadedManifest) -> Result<PathBuf, PipelineError> {
    let out = prepare_out(loaded)?;
    let inputs = stage_inputs(loaded, &out)?;
    let path = compute_path(loaded, &inputs)?;
    let file = out.join(PATH_FILE);
    path.write_csv(fs::File::create(&file)?, Some(&loaded.hash))?;
    Ok(file)
}

/// Run hierarchical forward selection and write the audit trace plus the
/// refit over the admitted terms.
pub fn cmd_select(loaded: &LoadedManifest) -> Result<(PathBuf, PathBuf), PipelineError> {
    let out = prepare_out(loaded)?;
    let config = loaded
        .manifest
        .selection
        .clone()
        .ok_or(PipelineError::ManifestField {
            field: "selection",
            message: "is required by this command".into(),
        })?;
    let table = load_table(loaded, &out)?;
    let model = PromptModel::from_file(loaded.model_path())?;
    let subprompts = model.enumerate()?;
    let terms = term_universe(&model, &config.interaction_strata, config.max_level)?;
    let universe = build_design_matrix(&model, &subprompts, &terms, loaded.manifest.fit.repeats)?;
    let y = table.response_vector(universe.row_keys(), loaded.manifest.fit.target)?;
    let trace = forward_select(&universe, &y, &config)?;
    let trace_path = out.join(TRACE_FILE);
    trace.write_jsonl(fs::File::create(&trace_path)?, Some(&loaded.hash))?;
    let fit_path = out.join(SELECTED_FIT_FILE);
    trace
        .final_fit()
        .write_json(fs::File::create(&fit_path)?, Some(&loaded.hash))?;
    Ok((trace_path, fit_path))
}

fn compute_estimates(
    loaded: &LoadedManifest,
    model: &PromptModel,
    table: &ScoreTable,
) -> Result<Vec<ShapleyEstimate>, PipelineError> {
    let value = TableValue::new(model, table, loaded.manifest.fit.target);
    Ok(shapley_values(&value, model)?)
}

/// Compute attribution values from the scored table and write both exports.
pub fn cmd_shapley(loaded: &LoadedManifest) -> Result<(PathBuf, PathBuf), PipelineError> {
    let out = prepare_out(loaded)?;
    let table = load_table(loaded, &out)?;
    let model = PromptModel::from_file(loaded.model_path())?;
    let estimates = compute_estimates(loaded, &model, &table)?;
    let csv_path = out.join(SHAPLEY_CSV_FILE);
    write_shapley_csv(&estimates, fs::File::create(&csv_path)?, Some(&loaded.hash))?;
    let json_path = out.join(SHAPLEY_JSON_FILE);
    write_shapley_json(&estimates, fs::File::create(&json_path)?, Some(&loaded.hash))?;
    Ok((csv_path, json_path))
}

/// Build the full report bundle under `<out>/report`. Fits are re-derived
/// from the score store: an unpenalized fit always, plus the manifest's
/// family when it is penalized, all sharing one term universe.
pub fn cmd_report(loaded: &LoadedManifest) -> Result<PathBuf, PipelineError> {
    let out = prepare_out(loaded)?;
    let inputs = stage_inputs(loaded, &out)?;
    let mut fits: BTreeMap<String, FitResult> = BTreeMap::new();
    fits.insert("ols".to_string(), fit_family(&FitFamily::Ols, &inputs)?);
    let family = &loaded.manifest.fit.family;
    if !matches!(family, FitFamily::Ols) {
        fits.insert(
            family.report_key().to_string(),
            fit_family(family, &inputs)?,
        );
    }
    let path = compute_path(loaded, &inputs)?;
    let estimates = compute_estimates(loaded, &inputs.model, &inputs.table)?;
    let bundle = comparison_report(
        &inputs.model,
        &fits,
        &estimates,
        &path,
        &inputs.table,
        DEFAULT_HIST_BINS,
        Some(loaded.hash.clone()),
    )?;
    let report_dir = out.join(REPORT_DIR);
    bundle.write_dir(&report_dir)?;
    Ok(report_dir)
}
