use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("threshold grid is empty: {0}")]
    EmptyGrid(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no converged grid point among {0} evaluated thresholds")]
    NoConvergedGridPoint(usize),

    #[error("experiment failed: {failed} of {total} replications failed")]
    ExperimentFailed { failed: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn config_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}
