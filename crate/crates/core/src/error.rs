use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: row {row}: {message}")]
    Parse {
        context: String,
        row: usize,
        message: String,
    },

    #[error("{context}: schema error: {message}")]
    Schema { context: String, message: String },

    #[error("frame invariant violated: {0}")]
    Frame(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("learner error: {0}")]
    Learner(String),

    #[error("clearing error: {0}")]
    Clearing(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(vec![message.into()])
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Checkpoint(_) => 2,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Frame(_)
            | Error::Alignment(_) => 3,
            Error::Learner(_) | Error::Clearing(_) | Error::Numerical(_) => 4,
        }
    }
}
