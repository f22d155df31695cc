//! Command-line front end for the stratified prompt analysis pipeline. One
//! subcommand per stage; every stage reads one run manifest and writes
//! fixed-name artifacts stamped with the manifest hash. Errors leave with a
//! nonzero exit code and a single JSON object on stderr.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use promptfactor::pipeline::{
    cmd_enumerate, cmd_fit, cmd_path, cmd_report, cmd_score, cmd_select, cmd_shapley,
    cmd_validate, load_manifest, FitFamily, GridSpec, LoadedManifest, RunManifest, ScorerSpec,
    SCORES_FILE,
};

#[derive(Parser)]
#[command(
    name = "promptfactor",
    version,
    about = "Stratified prompt analysis: enumerate subprompts, score them, and fit attribution models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a prompt-model file and print its shape as JSON
    Validate {
        /// Prompt-model file
        #[arg(long)]
        model: PathBuf,
    },
    /// Print every subprompt key, then the total count on the last line
    Enumerate {
        /// Prompt-model file
        #[arg(long)]
        model: PathBuf,
    },
    /// Score every subprompt into the run's score store
    Score(ManifestArgs),
    /// Fit the manifest's model family over the scored table
    Fit(ManifestArgs),
    /// Trace the regularization path over the manifest's lambda grid
    Path(ManifestArgs),
    /// Run hierarchical forward selection and write its audit trace
    Select(ManifestArgs),
    /// Compute per-component attribution values
    Shapley(ManifestArgs),
    /// Emit the report bundle directory
    Report(ManifestArgs),
}

#[derive(Args)]
struct ManifestArgs {
    /// Run manifest file
    #[arg(long)]
    manifest: PathBuf,
    /// Override the manifest's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scorer kind; only replay -> endpoint (go live with the
    /// recorded config) or restating the current kind is derivable
    #[arg(long, value_parser = ["endpoint", "synthetic", "replay"])]
    scorer: Option<String>,
    /// Override the lasso/logistic penalty weight
    #[arg(long)]
    lambda: Option<f64>,
    /// Override the lambda grid, written lo:hi:step
    #[arg(long)]
    grid: Option<String>,
    /// Override the term universe's maximum interaction order
    #[arg(long)]
    max_order: Option<usize>,
    /// Override the selection significance level
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the run seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ManifestArgs {
    fn has_overrides(&self) -> bool {
        self.out.is_some()
            || self.scorer.is_some()
            || self.lambda.is_some()
            || self.grid.is_some()
            || self.max_order.is_some()
            || self.alpha.is_some()
            || self.seed.is_some()
    }

    /// Load the manifest and fold the flag overrides in. With overrides the
    /// re-serialized manifest becomes the provenance unit: its hash stamps
    /// the artifacts and its text lands in the output directory.
    fn load(&self) -> anyhow::Result<LoadedManifest> {
        let loaded = load_manifest(&self.manifest)?;
        if !self.has_overrides() {
            return Ok(loaded);
        }
        let base_dir = loaded.base_dir().to_path_buf();
        let mut manifest = loaded.manifest;
        if let Some(out) = &self.out {
            manifest.out_dir = out.clone();
        }
        if let Some(kind) = &self.scorer {
            override_scorer(&mut manifest, kind)?;
        }
        if let Some(lambda) = self.lambda {
            match &mut manifest.fit.family {
                FitFamily::Lasso { lambda: l } | FitFamily::Logistic { lambda: l } => *l = lambda,
                FitFamily::Ols => {
                    bail!("--lambda applies only to lasso or logistic fit families")
                }
            }
        }
        if let Some(grid) = &self.grid {
            manifest.fit.grid = Some(parse_grid(grid)?);
        }
        if let Some(max_order) = self.max_order {
            manifest.terms.max_order = max_order;
        }
        if let Some(alpha) = self.alpha {
            match &mut manifest.selection {
                Some(config) => config.alpha = alpha,
                None => bail!("--alpha needs a selection section in the manifest"),
            }
        }
        if let Some(seed) = self.seed {
            manifest.seed = seed;
        }
        Ok(LoadedManifest::from_value(manifest, base_dir)?)
    }
}

fn override_scorer(manifest: &mut RunManifest, kind: &str) -> anyhow::Result<()> {
    let current = match &manifest.scorer {
        ScorerSpec::Synthetic { .. } => "synthetic",
        ScorerSpec::Endpoint { .. } => "endpoint",
        ScorerSpec::Replay { .. } => "replay",
    };
    if kind == current {
        return Ok(());
    }
    if let (ScorerSpec::Replay { config, binary, .. }, "endpoint") = (&manifest.scorer, kind) {
        manifest.scorer = ScorerSpec::Endpoint {
            config: config.clone(),
            binary: *binary,
            concurrency: 1,
        };
        return Ok(());
    }
    bail!(
        "--scorer {kind} cannot be derived from the manifest's {current} scorer; \
         edit the manifest instead"
    )
}

fn parse_grid(text: &str) -> anyhow::Result<GridSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("--grid must be lo:hi:step, got `{text}`");
    }
    let parse = |part: &str, name: &str| {
        part.parse::<f64>()
            .with_context(|| format!("--grid {name} `{part}` is not a number"))
    };
    Ok(GridSpec {
        lo: parse(parts[0], "lo")?,
        hi: parse(parts[1], "hi")?,
        step: parse(parts[2], "step")?,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Validate { model } => {
            let diagnostics = cmd_validate(&model)?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &diagnostics)?;
            writeln!(lock)?;
        }
        Command::Enumerate { model } => {
            let stdout = std::io::stdout();
            cmd_enumerate(&model, stdout.lock())?;
        }
        Command::Score(args) => {
            let loaded = args.load()?;
            let table = cmd_score(&loaded)?;
            println!(
                "scored {} records into {}",
                table.len(),
                loaded.out_path().join(SCORES_FILE).display()
            );
        }
        Command::Fit(args) => {
            let path = cmd_fit(&args.load()?)?;
            println!("wrote {}", path.display());
        }
        Command::Path(args) => {
            let path = cmd_path(&args.load()?)?;
            println!("wrote {}", path.display());
        }
        Command::Select(args) => {
            let (trace, fit) = cmd_select(&args.load()?)?;
            println!("wrote {}", trace.display());
            println!("wrote {}", fit.display());
        }
        Command::Shapley(args) => {
            let (csv, json) = cmd_shapley(&args.load()?)?;
            println!("wrote {}", csv.display());
            println!("wrote {}", json.display());
        }
        Command::Report(args) => {
            let dir = cmd_report(&args.load()?)?;
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
