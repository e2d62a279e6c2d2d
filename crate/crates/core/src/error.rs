use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed action: {0}")]
    MalformedAction(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("target prefix of length {prefix} exceeds model maximum {max}")]
    TooLong { prefix: usize, max: usize },

    #[error("model error on continuation {index}: {source}")]
    Continuation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("step budget exceeded after {0} steps")]
    StepBudget(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user configuration rather than I/O or models.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Precondition(_))
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
