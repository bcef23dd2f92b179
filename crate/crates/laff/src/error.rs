//! Crate-wide error type and result alias.

use std::path::PathBuf;

/// Errors produced by any layer of the crate.
///
/// The CLI maps these onto process exit codes: configuration and
/// validation problems exit with 2, runtime/numeric failures with 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes disagree for a kernel or block operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dim { op: &'static str, detail: String },

    /// A configuration value violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Structurally valid input that cannot be processed (zero vector,
    /// empty frame stream, batch without negatives, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The operation is not defined for the given model or data.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Non-finite values or a failed numeric check.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A malformed feature file, model file or manifest.
    #[error("format error in {path}: {detail} (at byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dim {
            op,
            detail: detail.into(),
        }
    }

    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dim { .. }
            | Error::Config(_)
            | Error::Degenerate(_)
            | Error::Unsupported(_)
            | Error::Format { .. }
            | Error::Json(_) => 2,
            Error::Numeric(_) | Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
