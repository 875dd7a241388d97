use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad token id, step index, shape).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape too large to enumerate: {outcomes} outcomes exceeds the limit of {limit}")]
    TooLarge { outcomes: u128, limit: u128 },

    #[error("posterior has zero mass for the target answer")]
    ZeroPosteriorMass,

    #[error("non-finite parameter after update at iteration {iteration}, datapoint {datapoint}")]
    NonFinite { iteration: usize, datapoint: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
