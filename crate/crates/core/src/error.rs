use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum CsFlowError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("I/O error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated stream: {0}")]
    Truncated(String),

    #[error("non-finite value at scale {scale}, flat index {index}")]
    NonFiniteValue { scale: usize, index: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("semi-supervised violation: train entry {0} is labeled anomalous")]
    AnomalousTrainEntry(String),

    #[error("non-finite value in block {block}{}", epoch.map(|e| format!(" (epoch {e})")).unwrap_or_default())]
    NonFinite { block: usize, epoch: Option<usize> },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{variant}: {source}")]
    Variant {
        variant: String,
        #[source]
        source: Box<CsFlowError>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CsFlowError {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CsFlowError::IoAt { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CsFlowError>;
