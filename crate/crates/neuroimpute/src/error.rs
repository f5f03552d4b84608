//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("volume file {path}: header declares {expected} voxels, payload holds {actual}")]
    PayloadSizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("invalid volume dimensions {dims:?}: every axis must be positive")]
    NonPositiveDims { dims: (usize, usize, usize) },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("volume dimension mismatch: {a:?} vs {b:?}")]
    DimMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },

    #[error("manifest validation failed: {0} violation(s)")]
    InvalidManifest(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("phantom geometry does not fit: every axis must be >= {min}, got {dims:?}")]
    DimsTooSmall { dims: (usize, usize, usize), min: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("no training scan with diagnosis {0} to average")]
    NoScansForDiagnosis(String),

    #[error("imputation pool exhausted for class {class}: requested {requested}, available {available}")]
    PoolExhausted {
        class: String,
        requested: usize,
        available: usize,
    },

    #[error("modality mismatch: model expects {expected}, dataset provides {actual}")]
    ModalityMismatch { expected: String, actual: String },

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// Exit-code class for the CLI: 1 for input/validation problems, 2 for runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Runtime(_))
    }
}
