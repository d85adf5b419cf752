use std::path::PathBuf;

use crate::corpus::{DomainId, SentimentLabel};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no valid rows ingested for domain `{domain}` ({rejected} rows rejected)")]
    EmptyCorpus { domain: DomainId, rejected: usize },

    #[error("invalid example `{id}` in domain `{domain}`: {reason}")]
    InvalidExample {
        domain: DomainId,
        id: String,
        reason: String,
    },

    #[error("{label} has fewer than 2 examples")]
    Stratification { label: SentimentLabel },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shot selection: pool has {available} candidates, {requested} requested")]
    ShotSelection { requested: usize, available: usize },

    #[error("sampler exhausted: every domain is frozen")]
    SamplerExhausted,

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("training aborted at step {step}: {message}")]
    NonFinite { step: usize, message: String },

    #[error("render error: {0}")]
    Render(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
