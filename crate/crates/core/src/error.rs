use thiserror::Error;

use crate::community::TraitKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by an [`AgentBackend`](crate::backend::AgentBackend) call.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("template error: {0}")]
    Template(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("calibration item {index} failed: {source}")]
    CalibrationItem { index: usize, source: BackendError },

    #[error("no diagnostic items target {0}")]
    UndefinedTrait(TraitKind),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("graph generation failed: no connected graph after {0} attempts")]
    GraphGeneration(usize),

    #[error("agent id {id} out of range for a graph of {n} nodes")]
    AgentOutOfRange { id: usize, n: usize },

    #[error("scoring claim {claim} failed: {source}")]
    Scoring { claim: String, source: BackendError },

    #[error("run metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no usable input: {0}")]
    NoData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line driver: 1 configuration,
    /// 2 backend, 3 partial or missing data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend(_) | Error::CalibrationItem { .. } | Error::Scoring { .. } => 2,
            Error::NoData(_) => 3,
            _ => 1,
        }
    }
}
