use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PegsError> = std::result::Result<T, E>;

/// Errors raised by the synthesis pipeline.
///
/// Variants fall into three families (data/schema, privacy parameters and
/// I/O) which the command-line front end maps onto distinct exit codes.
#[derive(Debug, Error)]
pub enum PegsError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}, column {column:?}: unknown category label {label:?}")]
    UnknownLabel {
        row: usize,
        column: String,
        label: String,
    },

    #[error("row {row}, column {column:?}: missing value but the feature declares no \"NA\" category")]
    MissingWithoutNa { row: usize, column: String },

    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid privacy parameter: {0}")]
    Privacy(String),

    #[error("conditional distribution of feature {feature} at key {key} is undefined (no counts and alpha = 0)")]
    EmptyConditional { feature: usize, key: u64 },

    #[error("blocks file {path:?}: {reason}")]
    BlocksFormat { path: PathBuf, reason: String },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PegsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PegsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad privacy parameters (epsilon, l, block size).
    pub fn is_privacy(&self) -> bool {
        matches!(self, PegsError::Privacy(_))
    }

    /// True for errors reading or writing files.
    pub fn is_io(&self) -> bool {
        match self {
            PegsError::Io { .. } => true,
            PegsError::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}
