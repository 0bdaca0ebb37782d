use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SleError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point swallowed at capacity time {time}")]
    Swallowed { time: f64 },
    #[error("unsupported parameter: {0}")]
    Unsupported(String),
    #[error("value not computed: {0}")]
    NotComputed(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("inverse map touches the slit tip at {0}")]
    TipContact(String),
    #[error("phi grid does not cover {count} required cells, e.g. {examples:?}")]
    PhiCoverage { count: usize, examples: Vec<(usize, usize)> },
    #[error("missing phi grid: {0}")]
    MissingGrid(String),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for SleError {
    fn from(e: std::io::Error) -> Self {
        SleError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SleError {
    fn from(e: serde_json::Error) -> Self {
        SleError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SleError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SleError::InvalidArgument(msg.into()))
}
