use thiserror::Error;

/// Errors raised across the analysis, prediction and simulation pipelines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate landscape: {0}")]
    Degenerate(String),

    #[error("connection failure: {0}")]
    ConnectionFailure(String),

    #[error("graph disconnected: {0}")]
    Disconnected(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation blew up at step {step}: {reason}")]
    BlowUp { step: u64, reason: String },

    #[error("unreliable estimate: {capped} of {total} trajectories hit the time cap")]
    Unreliable { capped: usize, total: usize },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
