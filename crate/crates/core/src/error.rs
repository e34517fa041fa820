use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("pair statistics are empty (no adjacent pairs)")]
    EmptyStatistics,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {value} out of range (limit {limit})")]
    IndexOutOfRange { value: u64, limit: u64 },

    #[error("no mergeable pairs remain")]
    ExhaustedPairs,

    #[error("malformed sequence: {0}")]
    MalformedSequence(String),

    #[error("layout violation: {0}")]
    LayoutViolation(String),

    #[error("pool for data type {0} is empty but has a non-zero ratio")]
    PoolExhausted(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("bad file format at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code, used by the CLI diagnostics and any foreign bindings.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownToken(_) => "UnknownToken",
            Error::Shape(_) => "ShapeError",
            Error::EmptyCorpus(_) => "EmptyCorpus",
            Error::EmptyStatistics => "EmptyStatistics",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::ExhaustedPairs => "ExhaustedPairs",
            Error::MalformedSequence(_) => "MalformedSequence",
            Error::LayoutViolation(_) => "LayoutViolation",
            Error::PoolExhausted(_) => "PoolExhausted",
            Error::InvalidVocabulary(_) => "InvalidVocabulary",
            Error::Format { .. } => "FormatError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
