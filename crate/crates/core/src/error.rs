use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; `line` is 1-based.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The data cannot support the requested model (too few individuals, order cap exceeded).
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// A hard size guard refused to run (e.g. exact enumeration beyond its limit).
    #[error("guard: {0}")]
    Guard(String),

    #[error("simulation failed: {0}")]
    Simulation(String),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
