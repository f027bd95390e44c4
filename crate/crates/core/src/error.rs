use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown field {0:?}")]
    UnknownField(String),

    /// The requested strategy cannot run against this table layout.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("spill failed: {0}")]
    Spill(#[source] io::Error),

    #[error("transport error: {0}")]
    Transport(#[source] io::Error),

    /// Remote side answered with an error frame.
    #[error("server error: {0}")]
    Remote(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// True for errors caused by user input rather than the runtime environment.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownField(_) | Error::Precondition(_)
        )
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
