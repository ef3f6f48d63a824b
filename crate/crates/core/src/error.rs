use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("referential integrity error: {0}")]
    Integrity(String),

    #[error("lookup error: unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("join error: {count} ids missing from the right-hand table (first: {first:?})")]
    Join { count: usize, first: Vec<String> },

    #[error("graph assembly error: {0}")]
    Assembly(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("forecast error: {0}")]
    Forecast(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("stale artifact for stage `{stage}`: {reason}; rerun `{stage}`")]
    Stale { stage: String, reason: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
