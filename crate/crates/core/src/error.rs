use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid command at event {event}: {reason}")]
    Command { event: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("search limit: {0}")]
    Limit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
