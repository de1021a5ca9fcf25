use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty class {0}")]
    EmptyClass(i64),

    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigendecomposition did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("softmax row {row} sums to {sum}, expected 1")]
    SoftmaxNotNormalized { row: usize, sum: f64 },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("training failed: {0}")]
    TrainingFailed(String),

    #[error("labels contain a single class; need both in-distribution and OOD rows")]
    SingleClass,

    #[error("score channel {0} has zero variance")]
    ZeroVariance(usize),

    #[error("{0}")]
    MissingInput(String),

    #[error("unknown model kind '{0}'")]
    UnknownKind(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error("reference set {path} changed: expected hash {expected}, found {found}")]
    HashMismatch { path: PathBuf, expected: String, found: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed model file: {0}")]
    Model(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
