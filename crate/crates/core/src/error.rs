use thiserror::Error;

/// Errors raised by the simulator and the bound formulas.
#[derive(Debug, Error)]
pub enum Error {
    /// An input parameter is outside its validity range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A closed-form expression was evaluated outside the region it was derived for.
    #[error("domain error: {0}")]
    Domain(String),

    /// The implicit minimum-received-power equation could not be bracketed.
    #[error("solver error: {0}")]
    Solver(String),

    /// Internal structures disagree with each other.
    #[error("internal consistency error: {0}")]
    Consistency(String),

    /// Malformed configuration or CSV input.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
