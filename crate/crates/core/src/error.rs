use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("line {line}: {msg}")]
    Validation { line: usize, msg: String },

    #[error("index {index} out of range for {what} (size {size})")]
    Range {
        what: &'static str,
        index: i64,
        size: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("undefined input: {0}")]
    UndefinedInput(&'static str),

    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite loss in epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("{kind} id not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
