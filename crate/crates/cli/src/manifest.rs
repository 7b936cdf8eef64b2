//! Run manifest: written before any work starts and rewritten after every
//! stage, so an aborted run still says how far it got.

use std::path::{Path, PathBuf};
use std::time::Instant;

use faer::Mat;
use grdpg::linalg::serde_mat;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed { exit_code: i32, message: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

/// Model quantities fixed before sampling.
#[derive(Debug, Clone, Serialize)]
pub struct Derived {
    pub signature: [usize; 2],
    #[serde(with = "serde_mat")]
    pub delta: Mat<f64>,
    #[serde(with = "serde_mat")]
    pub q_tilde: Mat<f64>,
    pub limit_eigenvalues: Vec<f64>,
    pub repeated_eigenvalues: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub status: RunStatus,
    pub config: ExperimentConfig,
    pub model_hash: String,
    pub seeds: Vec<u64>,
    pub derived: Option<Derived>,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    path: PathBuf,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig, model_hash: String) -> Self {
        let path = config.output_dir.join(MANIFEST_FILE);
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            status: RunStatus::Running,
            seeds: config.seeds.clone(),
            config,
            model_hash,
            derived: None,
            stages: Vec::new(),
            outputs: Vec::new(),
            path,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(&self.path, text).map_err(|e| CliError::Io(format!("{}: {e}", self.path.display())))
    }

    /// Runs `f` as a named stage, records its wall clock and rewrites the
    /// manifest.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        log::info!("stage {name}");
        let out = f();
        self.stages.push(StageTiming {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        self.write()?;
        out
    }
}
