use thiserror::Error;

pub type Result<T, E = CailError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CailError {
    #[error("invalid gridworld: {0}")]
    InvalidGrid(String),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index out of range: {what} {index} >= {bound}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("degenerate confidence: sum of beta is zero")]
    DegenerateConfidence,
    #[error("non-finite value in {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CailError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        CailError::InvalidArgument(msg.into())
    }
}
