//! Error type shared across the crate.
//!
//! Every fallible operation returns [`SoftsError`]. Each variant carries a
//! stable short code (see [`SoftsError::code`]) so the CLI can emit
//! machine-parsable errors without string-matching display text.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SoftsError>;

/// All error conditions surfaced by the library and CLI.
#[derive(Debug, Error)]
pub enum SoftsError {
    /// Tensor operands whose shapes do not line up for the requested op.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },

    /// A value that must be finite (gradient, loss, input cell) is NaN or Inf.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Structural CSV problems: missing header, wrong column count, empty file.
    #[error("csv format error in {path}: {detail}")]
    CsvFormat { path: PathBuf, detail: String },

    /// A single cell that failed to parse, addressed by row and column.
    #[error("csv value error in {path} at row {row}, column {column}: {detail}")]
    CsvValue {
        path: PathBuf,
        row: usize,
        column: String,
        detail: String,
    },

    /// Filesystem failures, tagged with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Invalid configuration: bad field values, unknown keys, impossible combinations.
    #[error("config error: {detail}")]
    Config { detail: String },

    /// Unreadable, corrupt, or mismatched checkpoint files.
    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    /// Dataset or split problems: series too short, empty window range, and so on.
    #[error("data error: {detail}")]
    Data { detail: String },

    /// Training-loop failures such as diverged validation loss.
    #[error("training error: {detail}")]
    Train { detail: String },
}

impl SoftsError {
    /// Stable machine-readable code for this error class.
    pub fn code(&self) -> &'static str {
        match self {
            SoftsError::ShapeMismatch { .. } => "shape",
            SoftsError::NonFinite { .. } => "nonfinite",
            SoftsError::CsvFormat { .. } => "csv_format",
            SoftsError::CsvValue { .. } => "csv_value",
            SoftsError::Io { .. } => "io",
            SoftsError::Config { .. } => "config",
            SoftsError::Checkpoint { .. } => "checkpoint",
            SoftsError::Data { .. } => "data",
            SoftsError::Train { .. } => "train",
        }
    }

    /// Shorthand for a shape error.
    pub fn shape(op: &str, detail: impl Into<String>) -> Self {
        SoftsError::ShapeMismatch {
            op: op.to_string(),
            detail: detail.into(),
        }
    }

    /// Shorthand for a config error.
    pub fn config(detail: impl Into<String>) -> Self {
        SoftsError::Config {
            detail: detail.into(),
        }
    }

    /// Shorthand for a data error.
    pub fn data(detail: impl Into<String>) -> Self {
        SoftsError::Data {
            detail: detail.into(),
        }
    }

    /// Shorthand for an io error tagged with its path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SoftsError::Io {
            path: path.into(),
            source,
        }
    }
}
