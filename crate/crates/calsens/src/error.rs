//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by data loading, fitting, estimation, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: missing columns, malformed grids, invalid options.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a contract (non-binary treatment, NA cells, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A nuisance fit failed (non-convergence, separation, empty arm).
    #[error("fit error: {0}")]
    Fit(String),

    /// An estimate is degenerate (zero measured confounding, no crossing).
    #[error("degenerate analysis: {0}")]
    Degenerate(String),

    /// Numerical failure (singular matrix, non-finite value).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// I/O failure while reading data or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config/validation, 3 degenerate,
    /// 4 numerical or fit failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) => 2,
            Error::Degenerate(_) => 3,
            Error::Fit(_) | Error::Numerical(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
