use thiserror::Error;

/// Errors produced by the portfolio-calculus engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("refinement error: {0}")]
    Refinement(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("partition error: {0}")]
    Partition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
