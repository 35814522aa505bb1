//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch while recording a graph node. Carries the id of the
    /// offending node so failures point at the exact op.
    #[error("shape mismatch at node {node}: {msg}")]
    Shape { node: usize, msg: String },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("invalid time arguments: {0}")]
    InvalidTime(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint format version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("non-finite loss at step {step}; last good parameters retained")]
    NumericAbort { step: usize },

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 0 ok, 2 usage, 3 config, 4 I/O,
    /// 5 verification failure, 6 numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 3,
            Error::Io(_) | Error::Json(_) => 4,
            Error::CheckpointVersion { .. }
            | Error::CheckpointShape(_)
            | Error::CheckpointCorrupt(_) => 4,
            Error::VerificationFailed(_) => 5,
            Error::NumericAbort { .. } => 6,
            _ => 3,
        }
    }
}
