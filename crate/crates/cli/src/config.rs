//! Experiment configuration: the on-disk TOML form and its resolved,
//! validated counterpart.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use grdpg::models::{MixtureDistribution, ModelSpec};
use grdpg::rng::replicate_seeds;
use grdpg::sampler::DiagonalMode;
use grdpg::ustats::UKernel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Covtable,
    QxConvergence,
    Figure1,
    Ustat,
    Twograph,
    Spectrum,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Covtable => "covtable",
            Experiment::QxConvergence => "qx-convergence",
            Experiment::Figure1 => "figure1",
            Experiment::Ustat => "ustat",
            Experiment::Twograph => "twograph",
            Experiment::Spectrum => "spectrum",
        }
    }

    fn default_n_values(self) -> Vec<usize> {
        match self {
            Experiment::Covtable => vec![2000, 8000],
            Experiment::QxConvergence => vec![125, 500, 2000, 8000],
            Experiment::Figure1 => vec![5, 500],
            Experiment::Ustat => vec![500, 2000],
            Experiment::Twograph => vec![2000],
            Experiment::Spectrum => vec![8000],
        }
    }

    fn default_replicates(self) -> usize {
        match self {
            Experiment::Covtable | Experiment::Spectrum => 5,
            Experiment::Twograph => 10,
            Experiment::QxConvergence | Experiment::Figure1 | Experiment::Ustat => 20,
        }
    }

    fn default_kernel(self) -> Option<&'static str> {
        match self {
            Experiment::Ustat => Some("inner-squared"),
            Experiment::Twograph => Some("inner"),
            _ => None,
        }
    }

    fn default_model(self) -> ModelSpec {
        match self {
            Experiment::Figure1 => two_mass_model(),
            _ => ModelSpec::three_block_indefinite(),
        }
    }
}

/// Two point masses in signature (1, 1); the default for `figure1`.
pub fn two_mass_model() -> ModelSpec {
    ModelSpec {
        b: None,
        centers: Some(vec![vec![0.8, 0.3], vec![0.6, -0.35]]),
        signature: Some([1, 1]),
        weights: vec![0.4, 0.6],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Json,
    Svg,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagonal {
    #[default]
    Sampled,
    Hollow,
}

impl From<Diagonal> for DiagonalMode {
    fn from(d: Diagonal) -> Self {
        match d {
            Diagonal::Sampled => DiagonalMode::SampledDiagonal,
            Diagonal::Hollow => DiagonalMode::Hollow,
        }
    }
}

/// `[model]` or `[alternative]`: a path to a model file, or the model
/// fields inline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub file: Option<PathBuf>,
    #[serde(rename = "B")]
    pub b: Option<Vec<Vec<f64>>>,
    pub centers: Option<Vec<Vec<f64>>>,
    pub signature: Option<[usize; 2]>,
    pub weights: Option<Vec<f64>>,
}

impl ModelSection {
    fn resolve(&self, base: &Path, label: &str) -> Result<ModelSpec, CliError> {
        let inline = self.b.is_some() || self.centers.is_some() || self.signature.is_some() || self.weights.is_some();
        match &self.file {
            Some(path) if inline => Err(CliError::Config(format!(
                "[{label}] gives both `file` ({}) and inline model fields",
                path.display()
            ))),
            Some(path) => {
                let path = if path.is_relative() { base.join(path) } else { path.clone() };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read model file {}: {e}", path.display())))?;
                ModelSpec::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
            None => Ok(ModelSpec {
                b: self.b.clone(),
                centers: self.centers.clone(),
                signature: self.signature,
                weights: self
                    .weights
                    .clone()
                    .ok_or_else(|| CliError::Config(format!("[{label}] needs `weights`")))?,
            }),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_values: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub root_seed: Option<u64>,
    pub replicates: Option<usize>,
    pub d: Option<usize>,
    pub kernel: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub emit: Option<Vec<Emit>>,
    pub diagonal: Option<Diagonal>,
    pub parallel: Option<bool>,
}

/// The file as written.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<ModelSection>,
    /// Second model for `twograph`; defaults to `model`.
    pub alternative: Option<ModelSection>,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SeedSource {
    Explicit,
    Derived { root_seed: u64, replicates: usize },
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub emit: Option<Vec<Emit>>,
}

/// Validated configuration. Serialized verbatim into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alternative: Option<ModelSpec>,
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub seed_source: SeedSource,
    /// Embedding dimension; `None` until checked against the model.
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    pub output_dir: PathBuf,
    pub emit: BTreeSet<Emit>,
    pub diagonal: Diagonal,
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Applies defaults and overrides and checks everything that does not
    /// need the model built. `base` is the directory relative model paths
    /// are resolved against.
    pub fn resolve(
        experiment: Experiment,
        file: &ConfigFile,
        base: &Path,
        overrides: &Overrides,
    ) -> Result<Self, CliError> {
        let ex = &file.experiment;
        let model = match &file.model {
            Some(m) => m.resolve(base, "model")?,
            None => experiment.default_model(),
        };
        let alternative = match &file.alternative {
            Some(_) if experiment != Experiment::Twograph => {
                return Err(CliError::Config("[alternative] is only used by twograph".into()))
            }
            Some(m) => Some(m.resolve(base, "alternative")?),
            None => None,
        };

        let n_values = ex.n_values.clone().unwrap_or_else(|| experiment.default_n_values());
        if n_values.is_empty() {
            return Err(CliError::Config("`n_values` is empty".into()));
        }

        let (seeds, seed_source) = match (&ex.seeds, ex.root_seed, ex.replicates) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(CliError::Config(
                    "give either `seeds` or `root_seed`/`replicates`, not both".into(),
                ))
            }
            (Some(list), None, None) => match overrides.seed {
                // An explicit list keeps its length; --seed re-derives it.
                Some(root) => (
                    replicate_seeds(root, list.len()),
                    SeedSource::Derived { root_seed: root, replicates: list.len() },
                ),
                None => (list.clone(), SeedSource::Explicit),
            },
            (None, root, count) => {
                let root_seed = overrides.seed.or(root).unwrap_or(0);
                let replicates = count.unwrap_or_else(|| experiment.default_replicates());
                (replicate_seeds(root_seed, replicates), SeedSource::Derived { root_seed, replicates })
            }
        };
        if seeds.is_empty() {
            return Err(CliError::Config("no replicate seeds".into()));
        }
        let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
        if distinct.len() != seeds.len() {
            return Err(CliError::Config("replicate seeds must be distinct".into()));
        }

        let kernel = ex.kernel.clone().or_else(|| experiment.default_kernel().map(String::from));
        match (&kernel, experiment) {
            (Some(k), Experiment::Ustat | Experiment::Twograph) => {
                UKernel::parse(k).map_err(|e| CliError::Config(e.to_string()))?;
            }
            (Some(_), _) => {
                return Err(CliError::Config(format!("`kernel` is not used by {}", experiment.name())))
            }
            (None, _) => {}
        }

        if ex.diagonal.is_some() && !matches!(experiment, Experiment::Covtable | Experiment::Twograph) {
            return Err(CliError::Config(format!(
                "`diagonal` only applies to covtable and twograph, not {}",
                experiment.name()
            )));
        }

        let output_dir = overrides
            .out
            .clone()
            .or_else(|| ex.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("grdpg-out").join(experiment.name()));
        let emit: BTreeSet<Emit> = overrides
            .emit
            .clone()
            .or_else(|| ex.emit.clone())
            .map(|v| v.into_iter().collect())
            .unwrap_or_else(|| [Emit::Csv, Emit::Json, Emit::Svg, Emit::Table].into_iter().collect());
        if emit.is_empty() {
            return Err(CliError::Config("`emit` is empty".into()));
        }

        let cfg = Self {
            experiment,
            model,
            alternative,
            n_values,
            seeds,
            seed_source,
            d: ex.d,
            kernel,
            output_dir,
            emit,
            diagonal: ex.diagonal.unwrap_or_default(),
            parallel: ex.parallel.unwrap_or(true),
        };
        if let Some(d) = cfg.d {
            cfg.check_sizes(d)?;
        }
        Ok(cfg)
    }

    /// Every `n` must exceed `d`; an `n = d` sample has no spectral gap.
    fn check_sizes(&self, d: usize) -> Result<(), CliError> {
        if d == 0 {
            return Err(CliError::Config("`d` must be positive".into()));
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n <= d) {
            return Err(CliError::Config(format!("n = {n} must exceed the dimension d = {d}")));
        }
        Ok(())
    }

    /// Builds the model(s) and checks `d`, `n_values` and kernel coordinates
    /// against them. Model-validity failures keep their own error class.
    pub fn build_models(&mut self) -> Result<(MixtureDistribution, Option<MixtureDistribution>), CliError> {
        let model = self.model.build().map_err(CliError::from_model)?;
        let dim = model.signature().dim();
        match self.d {
            Some(d) if d != dim => {
                return Err(CliError::Config(format!("`d` = {d} but the model has dimension {dim}")))
            }
            _ => self.d = Some(dim),
        }
        self.check_sizes(dim)?;
        if let Some(k) = &self.kernel {
            if let Some(j) = kernel_coordinates(k).into_iter().find(|&j| j >= dim) {
                return Err(CliError::Config(format!("kernel {k:?} uses coordinate {j} but d = {dim}")));
            }
        }
        let alternative = match &self.alternative {
            Some(spec) => {
                let alt = spec.build().map_err(CliError::from_model)?;
                if alt.signature() != model.signature() {
                    return Err(CliError::Config(format!(
                        "alternative model signature ({}, {}) differs from ({}, {})",
                        alt.signature().p(),
                        alt.signature().q(),
                        model.signature().p(),
                        model.signature().q()
                    )));
                }
                Some(alt)
            }
            None => None,
        };
        Ok((model, alternative))
    }

    pub fn diagonal_mode(&self) -> DiagonalMode {
        self.diagonal.into()
    }

    pub fn emits(&self, e: Emit) -> bool {
        self.emit.contains(&e)
    }
}

/// Coordinate indices named in `coord-mean(j)` / `coord-second(j,k)`.
fn kernel_coordinates(spec: &str) -> Vec<usize> {
    let s = spec.trim();
    ["coord-mean(", "coord-second("]
        .iter()
        .find_map(|p| s.strip_prefix(p))
        .and_then(|rest| rest.strip_suffix(')'))
        .map(|args| args.split(',').filter_map(|a| a.trim().parse().ok()).collect())
        .unwrap_or_default()
}

/// SHA-256 of the model's canonical JSON form.
pub fn model_hash(spec: &ModelSpec) -> String {
    let bytes = serde_json::to_vec(spec).expect("model spec serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str, ex: Experiment) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::resolve(ex, &ConfigFile::parse(text)?, Path::new("."), &Overrides::default())
    }

    #[test]
    fn empty_file_gives_table_setup() {
        let cfg = resolve("", Experiment::Covtable).unwrap();
        assert_eq!(cfg.model, ModelSpec::three_block_indefinite());
        assert_eq!(cfg.n_values, vec![2000, 8000]);
        assert_eq!(cfg.seeds, replicate_seeds(0, 5));
        assert_eq!(cfg.emit.len(), 4);
    }

    #[test]
    fn inline_model_and_explicit_seeds() {
        let cfg = resolve(
            "[model]\nB = [[0.5]]\nweights = [1.0]\n[experiment]\nseeds = [3, 4]\nn_values = [10]\nemit = [\"csv\"]\n",
            Experiment::Covtable,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.seed_source, SeedSource::Explicit);
        assert_eq!(cfg.emit.iter().copied().collect::<Vec<_>>(), vec![Emit::Csv]);
    }

    #[test]
    fn seed_override_rederives() {
        let file = ConfigFile::parse("[experiment]\nroot_seed = 1\nreplicates = 3\n").unwrap();
        let ov = Overrides { seed: Some(9), ..Default::default() };
        let cfg = ExperimentConfig::resolve(Experiment::Spectrum, &file, Path::new("."), &ov).unwrap();
        assert_eq!(cfg.seeds, replicate_seeds(9, 3));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            "[experiment]\nunknown = 1\n",
            "[experiment]\nseeds = []\n",
            "[experiment]\nreplicates = 0\n",
            "[experiment]\nseeds = [1]\nroot_seed = 2\n",
            "[experiment]\nseeds = [1, 1]\n",
            "[experiment]\nn_values = []\n",
            "[experiment]\nd = 3\nn_values = [3]\n",
            "[experiment]\nemit = []\n",
            "[experiment]\nemit = [\"png\"]\n",
            "[model]\nB = [[0.5]]\n",
            "[model]\nfile = \"m.toml\"\nweights = [1.0]\n",
            "[experiment]\nkernel = \"inner\"\n",
            "[alternative]\nB = [[0.5]]\nweights = [1.0]\n",
        ];
        for text in bad {
            assert!(matches!(resolve(text, Experiment::Covtable), Err(CliError::Config(_))), "{text}");
        }
        assert!(matches!(
            resolve("[experiment]\nkernel = \"cubic\"\n", Experiment::Ustat),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            resolve("[experiment]\ndiagonal = \"hollow\"\n", Experiment::Spectrum),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn n_equal_to_model_dimension_is_rejected_after_build() {
        let mut cfg = resolve("[experiment]\nn_values = [3]\n", Experiment::Covtable).unwrap();
        assert!(matches!(cfg.build_models(), Err(CliError::Config(_))));
    }

    #[test]
    fn d_must_match_model() {
        let mut cfg = resolve("[experiment]\nd = 2\n", Experiment::Covtable).unwrap();
        assert!(matches!(cfg.build_models(), Err(CliError::Config(_))));
    }

    #[test]
    fn kernel_coordinates_checked_against_d() {
        let mut cfg = resolve("[experiment]\nkernel = \"coord-second(0, 3)\"\n", Experiment::Ustat).unwrap();
        assert!(matches!(cfg.build_models(), Err(CliError::Config(_))));
        let mut cfg = resolve("[experiment]\nkernel = \"coord-second(0, 2)\"\n", Experiment::Ustat).unwrap();
        assert!(cfg.build_models().is_ok());
    }

    #[test]
    fn invalid_b_is_a_model_error() {
        let mut cfg = resolve("[model]\nB = [[1.2]]\nweights = [1.0]\n", Experiment::Covtable).unwrap();
        let err = cfg.build_models().unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }

    #[test]
    fn model_file_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.toml"), "B = [[0.25]]\nweights = [1.0]\n").unwrap();
        let file = ConfigFile::parse("[model]\nfile = \"m.toml\"\n").unwrap();
        let cfg = ExperimentConfig::resolve(Experiment::Spectrum, &file, dir.path(), &Overrides::default()).unwrap();
        assert_eq!(cfg.model.b, Some(vec![vec![0.25]]));
    }

    #[test]
    fn hash_changes_with_model() {
        let a = model_hash(&ModelSpec::three_block_indefinite());
        let mut spec = ModelSpec::three_block_indefinite();
        spec.weights = vec![0.3, 0.35, 0.35];
        assert_eq!(a.len(), 64);
        assert_ne!(a, model_hash(&spec));
        assert_eq!(a, model_hash(&ModelSpec::three_block_indefinite()));
    }
}
