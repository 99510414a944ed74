use thiserror::Error;

/// Errors surfaced by the disorder library.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameter validation failed; every violated constraint is listed.
    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("mark {mark} is outside the support of the pre-disorder mark law")]
    MarkOutsideSupport { mark: f64 },

    #[error("event {index}: {source}")]
    BadEvent {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("corrupted path: {0}")]
    CorruptedPath(String),

    #[error("time {t} outside trajectory range [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("region {region} requires regime {required}, current regime is {actual}")]
    RegionUndefined {
        region: &'static str,
        required: &'static str,
        actual: String,
    },

    #[error("invalid grid specification: {}", .0.join("; "))]
    InvalidGrid(Vec<String>),

    #[error("solver invariant violated at iteration {iteration}: {detail}")]
    SolverInvariant { iteration: usize, detail: String },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
