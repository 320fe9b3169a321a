use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the training stack.
#[derive(Debug)]
pub enum Error {
    /// An argument violated a documented precondition (shape, range, length).
    InvalidArgument(String),
    /// A numeric input contained NaN or an infinity where finite values are required.
    NumericInput(String),
    /// An operation was called in a state its contract forbids.
    ContractViolation(String),
    /// Sampling was requested from a replay buffer with no stored episodes.
    EmptyBuffer,
    /// A run configuration failed validation; every violation is listed.
    InvalidConfig(Vec<String>),
    Io(io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NumericInput(msg) => write!(f, "non-finite numeric input: {msg}"),
            Error::ContractViolation(msg) => write!(f, "contract violation: {msg}"),
            Error::EmptyBuffer => write!(f, "replay buffer is empty"),
            Error::InvalidConfig(violations) => {
                write!(f, "invalid config: {}", violations.join("; "))
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
