use thiserror::Error;

/// Errors raised by the analytic, calibration and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A conditional probability was requested on an event that never occurs
    /// (e.g. heralding with zero mean pair number).
    #[error("undefined conditional: {0}")]
    UndefinedConditional(String),

    #[error("detector saturated: {0}")]
    Saturation(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("calibration failure: {0}")]
    CalibrationFailure(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
