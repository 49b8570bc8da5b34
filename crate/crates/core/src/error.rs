use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{0} is empty")]
    EmptyInput(String),

    #[error("label column not found: `{0}`")]
    MissingLabelColumn(String),

    #[error("key column not found: `{0}`")]
    MissingKeyColumn(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input at {location}: {message}")]
    Malformed { location: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("entropy is undefined for an empty histogram")]
    EmptyHistogram,

    #[error("need {needed} distinct partition keys, table has {available}")]
    NotEnoughKeys { needed: usize, available: usize },

    #[error("not enough samples of class `{class}`: need {needed}, have {available} (short by {})", .needed - .available)]
    InsufficientSamples {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("party {party}: entropy band unreachable ({reason})")]
    BandUnreachable { party: usize, reason: String },

    #[error("party {party}: {message}")]
    Party { party: usize, message: String },

    #[error("client selection is empty")]
    EmptySelection,

    #[error("unknown party id {0} in client selection")]
    UnknownParty(usize),

    #[error("no updates to aggregate")]
    NoUpdates,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
