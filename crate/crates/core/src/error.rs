use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state {0:?}: source-domain states must be integer cells inside the grid")]
    InvalidState((f64, f64)),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("parameter `{tensor}` diverged (non-finite value) at iteration {iteration}")]
    Diverged { tensor: String, iteration: usize },

    #[error("regime `{regime}` not reached: {detail}")]
    RegimeNotMet { regime: String, detail: String },

    #[error("instance too large for oracle `{oracle}`: {detail}")]
    InstanceTooLarge { oracle: &'static str, detail: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
