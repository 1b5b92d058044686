use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity showed up in a forward or backward pass.
    #[error("non-finite value in {op} ({pass})")]
    Numeric { op: &'static str, pass: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training diverged; the last finite parameters were written to `checkpoint`.
    #[error("training aborted on non-finite loss at epoch {epoch}; last good checkpoint: {checkpoint:?}")]
    Diverged {
        epoch: usize,
        checkpoint: Option<PathBuf>,
    },

    /// The stage-1 quality gate refused to open.
    #[error("reconstruction IoU {iou:.4} is below the gate threshold {threshold}")]
    Gate { iou: f64, threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
