use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the super-resolution pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("zero dynamic range")]
    ZeroDynamicRange,

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("patch grid: {0}")]
    Patch(String),

    #[error("bad magic in {path}")]
    BadMagic { path: PathBuf },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("missing parameter {0}")]
    MissingParam(String),

    #[error("non-finite loss at step {step}: {snapshot}")]
    NonFiniteLoss { step: u64, snapshot: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
