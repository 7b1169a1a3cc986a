use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("exponent overflow: argument {exponent} at delta = {delta}; use a tempered loss")]
    Overflow { delta: f64, exponent: f64 },

    #[error("{what} did not converge (residual {residual:e})")]
    Numeric { what: &'static str, residual: f64 },

    #[error("invalid loss: {0}")]
    InvalidLoss(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("illegal trajectory: {0}")]
    IllegalTrajectory(String),

    #[error("enumeration cap exceeded: {count} > {cap}")]
    CapExceeded { count: f64, cap: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite gradient at step {step}: {dump}")]
    NonFiniteGradient { step: usize, dump: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
