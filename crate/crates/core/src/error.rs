use std::io;

use thiserror::Error;

/// Errors raised by the library.
///
/// The variants map onto the CLI exit-code contract: I/O and format problems
/// and violated preconditions are all reported as contract failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no cluster: every point was classified as noise")]
    NoCluster,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
