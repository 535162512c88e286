use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("no double-sampled entries available for error estimation")]
    NoPairs,

    #[error("budget {budget} is smaller than the initialization cost {required}")]
    BudgetTooSmall { budget: usize, required: usize },

    #[error("every arm has reached its observation cap")]
    AllArmsCapped,

    #[error("svd failed to converge")]
    SvdFailed,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed metrics row: {0}")]
    MalformedRow(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
