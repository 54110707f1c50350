//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: malformed record: {msg}")]
    Parse { line: usize, msg: String },

    #[error("query {query_id}: {msg}")]
    Validation { query_id: String, msg: String },

    #[error("no impressions")]
    EmptyLog,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("query {query_id}: clicked entity has no facet value")]
    MissingClickedValue { query_id: String },

    #[error("feature vector has {got} dimensions, tree expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("search space too large: {required} candidates exceed cap {cap}")]
    CapExceeded { required: u128, cap: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;
