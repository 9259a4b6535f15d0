//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected} values, got {actual}")]
    InputShape { expected: usize, actual: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate segment: endpoints are identical")]
    DegenerateSegment,

    #[error("parse error in {context} at byte {offset}: {message}")]
    Parse { context: String, offset: usize, message: String },

    #[error("missing data file {}: {hint}", path.display())]
    MissingData { path: PathBuf, hint: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("soundness violation: {0}")]
    Soundness(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(context: impl Into<String>, offset: usize, message: impl Into<String>) -> Self {
        Error::Parse { context: context.into(), offset, message: message.into() }
    }

    /// True for failures caused by the environment (files, malformed bytes)
    /// rather than by invalid values.
    pub fn is_io_or_parse(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. } | Error::MissingData { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
