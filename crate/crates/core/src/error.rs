use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the benchmark.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("checkpoint {}: {kind}", path.display())]
    Checkpoint { path: PathBuf, kind: CheckpointError },

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("grid point {point}, fold {fold}: {source}")]
    GridPoint {
        point: usize,
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Structured reasons a checkpoint file is rejected.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated file")]
    Truncated,
    #[error("checksum mismatch")]
    Checksum,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("malformed tensor {0}")]
    Tensor(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Process exit code: 1 for numeric failures, 2 for usage and I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } => 1,
            Error::GridPoint { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
