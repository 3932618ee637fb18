use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the localization engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("map integrity violation: {message} (ids: {ids:?})")]
    Integrity { message: String, ids: Vec<u64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown id {0}")]
    UnknownId(u64),

    #[error("corrupt forest container: {0}")]
    Container(String),

    #[error("{path}: {source}")]
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Parse { .. } | Error::Container(_) => 4,
            Error::Integrity { .. } | Error::UnknownId(_) | Error::DimensionMismatch { .. } => 5,
            Error::InvalidDescriptor(_) | Error::InvalidInput(_) | Error::Empty(_) | Error::Degenerate(_) => 6,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
