use std::io;

use thiserror::Error;

/// Machine-readable reason a model or dataset file was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorCode {
    BadMagic,
    UnsupportedVersion,
    Truncated,
    Inconsistent,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error ({code:?}): {message}")]
    Format {
        code: FormatErrorCode,
        message: String,
    },

    #[error("record count {requested} exceeds limit {limit}")]
    Overflow { requested: u64, limit: u64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("degenerate variance: N*p0*(1-p0) = {0} < 5")]
    DegenerateVariance(f64),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn format_err(code: FormatErrorCode, msg: impl Into<String>) -> Error {
    Error::Format {
        code,
        message: msg.into(),
    }
}
