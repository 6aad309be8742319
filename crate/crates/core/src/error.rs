use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("parameter `{0}` is not set")]
    Unset(&'static str),

    #[error("device id {id} out of range (N = {n})")]
    IdOutOfRange { id: u64, n: u64 },

    #[error("message {message} out of range (S = {s})")]
    MessageOutOfRange { message: u64, s: u64 },

    #[error("delay {tau} outside [0, {max}]")]
    DelayOutOfRange { tau: f64, max: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam { name, reason: reason.into() }
}
