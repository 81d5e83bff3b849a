use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("cluster of size {size} exceeds the maximum cluster size {cap}")]
    CapViolation { size: usize, cap: usize },

    #[error("n = {n} is too large for exhaustive enumeration (max {max})")]
    TooLarge { n: usize, max: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("infeasible calibration: {0}")]
    Infeasible(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("log joint drifted: tracked {tracked}, recomputed {recomputed}")]
    Bookkeeping { tracked: f64, recomputed: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
