use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested quantity has no meaningful value for this input
    /// (e.g. a welfare ratio when every optimum is zero).
    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("{what} has size {size}, which exceeds the configured cap of {cap}")]
    CapExceeded {
        what: &'static str,
        size: u128,
        cap: u128,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("linear program solver failed: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
