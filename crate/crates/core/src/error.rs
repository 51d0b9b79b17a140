use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures surfaced by the library.
///
/// Validation errors (bad arguments, malformed config) are distinguished from
/// runtime aborts (divergence, I/O) so the CLI can map them onto stable exit
/// codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("outside theorem regime: {0}")]
    Regime(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("SGLD chain produced a non-finite state at step {step}")]
    ChainAborted { step: usize },

    #[error("all {chains} SGLD chains aborted")]
    AllChainsAborted { chains: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

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
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Shape(_)
                | Error::Regime(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::TooLarge(_)
        )
    }
}
