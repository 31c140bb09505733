use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("decode failure: {0}")]
    DecodeFailure(String),

    /// A pre-sized buffer ran out; `limit` names the config knob to raise.
    #[error("capacity exceeded: {limit} = {value}")]
    Capacity { limit: &'static str, value: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
