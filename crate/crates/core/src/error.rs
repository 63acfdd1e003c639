use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the attribution pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Every connected component fell outside the median-area band.
    #[error("no letter candidates survived area filtering")]
    NoLetters,
    #[error("letter histogram is not bimodal")]
    Unimodal,
    #[error("letter skipped: {0}")]
    LetterSkipped(String),
    #[error("page skipped: {0}")]
    PageSkipped(String),
    #[error("page undecidable: no group predictions")]
    Undecidable,
    #[error("training error: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
