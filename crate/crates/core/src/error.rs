use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Hermite degree {degree} exceeds the configured cap {cap}")]
    DegreeTooLarge { degree: usize, cap: usize },

    #[error("index set for P={order}, M={cells}, d={dim} has {count} elements, above the cap {cap}")]
    IndexSetTooLarge {
        order: usize,
        cells: usize,
        dim: usize,
        count: u128,
        cap: usize,
    },

    #[error("invalid multi-index operation: {0}")]
    MultiIndex(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("time {t} lies outside (0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("time {0} is not a point of the sampling grid")]
    NotOnGrid(f64),

    #[error("non-finite terminal value at sample {sample}")]
    NonFiniteTerminal { sample: usize },

    #[error("non-finite driver value at step {step}, sample {sample}")]
    NonFiniteDriver { step: usize, sample: usize },

    #[error("non-finite chaos coefficient at step {step}")]
    NonFiniteCoefficient { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing monitoring time {0} in the price table")]
    MissingMonitoringTime(f64),

    #[error("coefficients were not retained; rerun with retain_coefficients enabled")]
    CoefficientsNotRetained,

    #[error("{0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
