use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error in {file}:{line}: {message}")]
    Data {
        file: String,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    DataGeneral(String),

    #[error("numerical failure at augmented step {time}: {message}")]
    Numerical { time: usize, message: String },

    #[error("numerical failure: {0}")]
    NumericalGeneral(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Adds sampler context (iteration number) to numerical failures.
    pub fn with_iteration(self, iteration: usize) -> Self {
        match self {
            Error::Numerical { time, message } => Error::Numerical {
                time,
                message: format!("iteration {iteration}: {message}"),
            },
            Error::NumericalGeneral(message) => {
                Error::NumericalGeneral(format!("iteration {iteration}: {message}"))
            }
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data { .. } | Error::DataGeneral(_) | Error::Io { .. } => 3,
            Error::Numerical { .. } | Error::NumericalGeneral(_) => 4,
            Error::Bounds(_) | Error::InvalidInput(_) => 2,
        }
    }
}
