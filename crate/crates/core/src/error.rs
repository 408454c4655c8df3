use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("dangling reference: {kind} `{name}` is not declared")]
    DanglingReference { kind: &'static str, name: String },

    #[error("cycle detected: {0}")]
    CycleDetected(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stratum exhausted: category {category} has {available} unused configurations, {requested} requested")]
    StratumExhausted {
        category: String,
        requested: u64,
        available: u128,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown filter field `{0}`")]
    UnknownFilterField(String),

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("no cases with a HasAnomaly verdict; nothing to evaluate")]
    EmptyEvaluation,

    #[error("case `{case_id}` is missing file {path}")]
    MissingCaseFile { case_id: String, path: PathBuf },

    #[error("malformed record in {path}: {reason}")]
    MalformedRecord { path: PathBuf, reason: String },

    #[error("plugin `{name}` failed: {reason}")]
    Plugin { name: String, reason: String },

    #[error("fault space overflow while multiplying counts")]
    CardinalityOverflow,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
