use std::path::PathBuf;

use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A value or dimension does not satisfy an operation's precondition.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Caller-supplied data is empty, inconsistent, or otherwise unusable.
    #[error("input error: {0}")]
    Input(String),
    /// Degenerate geometry (zero-area triangles and the like).
    #[error("geometry error: {0}")]
    Geometry(String),
    /// An object is not in the state an operation requires.
    #[error("state error: {0}")]
    State(String),
    /// An optimization produced a non-finite loss; `dump` is a JSON snapshot.
    #[error("non-finite loss at step {step}: {message}")]
    NonFinite {
        step: usize,
        message: String,
        dump: String,
    },
    /// A file could not be decoded. `location` is a byte offset or line.
    #[error("malformed {format} file {path:?} at {location}: {message}")]
    Malformed {
        format: &'static str,
        path: PathBuf,
        location: String,
        message: String,
    },
    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input rather than a runtime failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Input(_) | Error::Geometry(_) | Error::Malformed { .. }
        )
    }
}
