use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no alignment exists for T={frames}, U={labels}")]
    NoAlignment { frames: usize, labels: usize },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("config mismatch in field `{field}`: {left} vs {right}")]
    ConfigMismatch {
        field: String,
        left: String,
        right: String,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable identifier used by the command line for machine-parsable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Invalid(_) => "invalid",
            Error::NoAlignment { .. } => "no-alignment",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::Architecture(_) => "architecture",
            Error::ConfigMismatch { .. } => "config-mismatch",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
