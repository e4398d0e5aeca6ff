use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the imputation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}, column '{column}': category out of range ({value} not in 1..={k})")]
    CategoryOutOfRange {
        row: usize,
        column: String,
        value: String,
        k: usize,
    },
    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error(
        "column '{0}' has zero variance over its observed entries; remove constant columns before imputation"
    )]
    ZeroVariance(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(
        "missingness rule can reach at most rate {max_rate:.4}, below the requested {requested:.4}"
    )]
    UnreachableRate { requested: f64, max_rate: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
