//! `grdpg-lab`: batch experiments over generalized random dot product graphs.
//!
//! Each run resolves a TOML config, writes `manifest.json` into the output
//! directory, then the experiment's CSV/JSON/SVG/text outputs.

pub mod config;
pub mod experiments;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::Parser;
use grdpg::error::GrdpgError;
use thiserror::Error;

pub use config::{ConfigFile, Emit, Experiment, ExperimentConfig, Overrides};
pub use manifest::{RunManifest, RunStatus};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("model error: {0}")]
    Model(GrdpgError),
    #[error("numerical degeneracy: {0}")]
    Degenerate(GrdpgError),
    #[error("{0}")]
    Failed(GrdpgError),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(_) => 3,
            CliError::Degenerate(_) => 4,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }

    /// Classification for errors raised while building a model from its spec:
    /// malformed input is a config error, an invalid model a model error.
    pub fn from_model(e: GrdpgError) -> Self {
        match e {
            GrdpgError::InvalidInput(m) | GrdpgError::InvalidDimension(m) => CliError::Config(m),
            e => e.into(),
        }
    }
}

impl From<GrdpgError> for CliError {
    fn from(e: GrdpgError) -> Self {
        if e.is_model_error() {
            return CliError::Model(e);
        }
        if e.is_degeneracy() {
            return CliError::Degenerate(e);
        }
        match e {
            GrdpgError::IncompatibleEmbeddings(_) | GrdpgError::InvalidBlocks(_) => CliError::Degenerate(e),
            GrdpgError::InvalidInput(m) => CliError::Config(m),
            GrdpgError::InsufficientSample { .. } => CliError::Config(e.to_string()),
            GrdpgError::Io(m) => CliError::Io(m),
            e => CliError::Failed(e),
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "grdpg-lab", version, about = "Generalized random dot product graph experiments")]
pub struct Args {
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// TOML file with optional `[model]` and `[experiment]` tables.
    #[arg(long)]
    pub config: PathBuf,
    /// Root seed; replicate seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub emit: Option<Vec<Emit>>,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub outputs: Vec<String>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

fn prepare_output_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".grdpg-lab-probe");
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", dir.display())))
}

pub fn resolve(args: &Args) -> Result<ExperimentConfig, CliError> {
    let file = ConfigFile::load(&args.config)?;
    let base = args.config.parent().unwrap_or_else(|| Path::new("."));
    let overrides = Overrides {
        seed: args.seed,
        out: args.out.clone(),
        emit: args.emit.clone(),
    };
    ExperimentConfig::resolve(args.experiment, &file, base, &overrides)
}

/// Runs one experiment end to end. The manifest records the failure when
/// anything after config resolution goes wrong.
pub fn run(args: &Args) -> Result<RunOutcome, CliError> {
    let cfg = resolve(args)?;
    prepare_output_dir(&cfg.output_dir)?;
    let hash = config::model_hash(&cfg.model);
    let mut manifest = RunManifest::new(cfg, hash);
    manifest.write()?;
    let result = experiments::run(&mut manifest);
    manifest.status = match &result {
        Ok(_) => RunStatus::Complete,
        Err(e) => RunStatus::Failed {
            exit_code: e.exit_code(),
            message: e.to_string(),
        },
    };
    let written = manifest.write();
    let mut outcome = result?;
    written?;
    outcome.outputs.insert(0, manifest::MANIFEST_FILE.to_string());
    Ok(outcome)
}
