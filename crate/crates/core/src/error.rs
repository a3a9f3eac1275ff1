use thiserror::Error;

/// Errors raised by the simulators, oracles and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or inconsistent configuration (graph spec, grid, method).
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called in a state where it is not defined.
    #[error("usage error: {0}")]
    Usage(String),

    /// Exact enumeration requested on an instance that is too large.
    #[error("instance too large for exact enumeration: {vertices} vertices (max {max})")]
    Size { vertices: usize, max: usize },

    /// A closed form was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Incrementally maintained bookkeeping disagrees with a recount.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// A truncated chain lost more probability mass than allowed.
    #[error("truncation at K={k} leaked {leak:e} mass (limit {limit:e}); increase K")]
    TruncationLeak { k: usize, leak: f64, limit: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
