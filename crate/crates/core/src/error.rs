use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or out-of-contract input (dimension mismatch, non-finite values, bad ranges).
    #[error("invalid input: {0}")]
    Input(String),
    /// Inputs are individually valid but the requested quantity is undefined for them.
    #[error("domain error: {0}")]
    Domain(String),
    /// An operation was invoked with the wrong kind of argument (e.g. the wrong bound regime).
    #[error("usage error: {0}")]
    Usage(String),
    /// A numerical routine failed (indefinite matrix, failed factorisation).
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Input(msg()))
    }
}
