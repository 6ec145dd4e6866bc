use thiserror::Error;

/// Errors raised anywhere in the analysis toolkit.
///
/// The variants follow the error classes named by each operation's contract
/// so callers (and the CLI exit-code mapping) can tell them apart.
#[derive(Debug, Error)]
pub enum Error {
    /// Model or plan does not fit the configuration (bad dims, head out of range).
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data violates a precondition.
    #[error("input error: {0}")]
    Input(String),

    /// The synthetic generator cannot satisfy the requested constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    /// A statistic is not defined for the given data (e.g. a polarity is absent).
    #[error("undefined statistic: {0}")]
    Undefined(String),

    /// A file could not be parsed or has the wrong format version.
    #[error("format error: {0}")]
    Format(String),

    /// Protocol violation: a sample tagged for one split is used by another stage.
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn input_err(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
