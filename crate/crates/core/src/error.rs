use std::io;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (dimension mismatch, empty set, ...).
    #[error("input error: {0}")]
    Input(String),

    /// An invalid or incomplete configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A gradient was requested for a loss that has none.
    #[error("surrogate required: loss `{0}` is not differentiable")]
    SurrogateRequired(&'static str),

    /// Non-finite values appeared where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A textual format could not be decoded.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An inner step of a training run failed.
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
