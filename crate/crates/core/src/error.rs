use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range (len {len})")]
    InvalidIndex { index: usize, len: usize },

    #[error("non-finite position for particle {particle}: {value}")]
    NonFinitePosition { particle: usize, value: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },

    /// A solver pass produced a NaN or infinite value.
    #[error("numerical abort in pass `{pass}`: particle id {particle} has a non-finite {field}")]
    NumericalAbort {
        pass: &'static str,
        particle: u32,
        field: &'static str,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
