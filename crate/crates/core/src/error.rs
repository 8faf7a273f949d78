use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("environment fault at interaction step {step}: {reason}")]
    EnvironmentFault { step: usize, reason: String },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("replay buffer not ready: holds {len} transitions, need {needed}")]
    NotReady { len: usize, needed: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
