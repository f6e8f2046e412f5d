use thiserror::Error;

/// Errors raised by tensor operations, model construction and data handling.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A hyperparameter or geometry combination cannot be realised.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an API contract (non-scalar loss, empty token set, ...).
    #[error("contract error: {0}")]
    Contract(String),
    /// Input data is malformed.
    #[error("data error: {0}")]
    Data(String),
    /// An operation produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    /// Training hit a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}, step {step}: non-finite value in {op}")]
    Diverged { epoch: usize, step: usize, op: &'static str },
    /// Binary container or text file could not be decoded.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<S: Into<String>>(msg: S) -> Error {
    Error::Dimension(msg.into())
}
