//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by calibration, fitting, and file handling.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor/layer/batch shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument outside its mathematical domain (e.g. T <= 0, M = 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// A constrained problem whose constraints cannot be met.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A solver diverged or failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A file parsed but its contents violate the schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A file could not be parsed at all.
    #[error("parse error: {0}")]
    Parse(String),

    /// Bad command-line usage.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data/schema, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Io(_) | Error::Parse(_) | Error::Schema(_) => 2,
            Error::Dimension(_) | Error::Domain(_) | Error::Infeasible(_) | Error::Numerical(_) => {
                3
            }
        }
    }
}
