use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("archive is empty")]
    EmptyArchive,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("ensemble needs at least two members for disagreement, got {0}")]
    TooFewMembers(usize),

    #[error("could not place {requested} obstacles after {attempts} attempts")]
    ObstaclePlacement { requested: usize, attempts: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("training produced non-finite parameters")]
    NonFinite,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
