use thiserror::Error;

/// Every failure mode surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("input is empty")]
    EmptyInput,

    #[error("invalid k: {0}")]
    InvalidK(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate interaction for user {user_id}, item {item_id} (line {line})")]
    DuplicateInteraction { user_id: u64, item_id: u64, line: usize },

    #[error("invalid value: {0}")]
    Value(String),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown category: {0}")]
    UnknownCategory(String),

    #[error("invalid fraction {0}: must lie strictly between 0 and 1 and yield a non-empty part")]
    InvalidFraction(f64),

    #[error("split already has a validation set")]
    AlreadyCarved,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("cold start: {0}")]
    ColdStart(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular linear system")]
    SingularSystem,

    #[error("AUC undefined: need at least one positive and one negative label")]
    UndefinedAuc,

    #[error("reference time {reference} precedes transaction at {timestamp}")]
    InvalidReference { reference: i64, timestamp: i64 },

    #[error("ensemble member {index}: {source}")]
    Member { index: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    pub(crate) fn cold_user(user: usize) -> Self {
        Error::ColdStart(format!("user index {user} has no training history"))
    }

    pub(crate) fn cold_item(item: usize) -> Self {
        Error::ColdStart(format!("item index {item} has no training history"))
    }

    pub fn is_cold_start(&self) -> bool {
        match self {
            Error::ColdStart(_) => true,
            Error::Member { source, .. } => source.is_cold_start(),
            _ => false,
        }
    }

    pub(crate) fn member(index: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::Member { index, source: Box::new(e) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
