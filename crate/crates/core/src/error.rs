use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrdpgError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e}, scale {scale:e})")]
    NotPsd { min_eigenvalue: f64, scale: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("kernel value {value} at ({row}, {col}) is outside [0, 1]")]
    InvalidKernel { row: usize, col: usize, value: f64 },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("invalid eigenvalue blocks: {0}")]
    InvalidBlocks(String),
    #[error("block {block} is degenerate: {reason}")]
    DegenerateBlock { block: usize, reason: String },
    #[error("need at least {needed} rows for a kernel of this arity, got {got}")]
    InsufficientSample { needed: usize, got: usize },
    #[error("incompatible embeddings: {0}")]
    IncompatibleEmbeddings(String),
    #[error("observed signature ({observed_p}, {observed_q}) does not match model signature ({p}, {q})")]
    SignatureMismatch {
        p: usize,
        q: usize,
        observed_p: usize,
        observed_q: usize,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
}

impl GrdpgError {
    /// True for failures caused by the model itself (invalid B, kernel,
    /// out-of-range inner products) rather than by a particular draw.
    pub fn is_model_error(&self) -> bool {
        matches!(
            self,
            GrdpgError::InvalidModel(_) | GrdpgError::InvalidKernel { .. } | GrdpgError::NotPsd { .. }
        )
    }

    /// True for aborts caused by numerical degeneracy of a sample or embedding.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self,
            GrdpgError::DegenerateSample(_)
                | GrdpgError::DegenerateBlock { .. }
                | GrdpgError::SignatureMismatch { .. }
                | GrdpgError::Numerical(_)
        )
    }
}

impl From<std::io::Error> for GrdpgError {
    fn from(e: std::io::Error) -> Self {
        GrdpgError::Io(e.to_string())
    }
}

impl From<csv::Error> for GrdpgError {
    fn from(e: csv::Error) -> Self {
        GrdpgError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GrdpgError>;
