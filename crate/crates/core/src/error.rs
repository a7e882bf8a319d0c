//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed CSV {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value at (series {series}, time {time}, feature {feature})")]
    NonFinite { series: usize, time: usize, feature: usize },

    #[error("invalid window [{start}, {end}] for time axis of length {n_time}")]
    InvalidWindow { start: usize, end: usize, n_time: usize },

    #[error("split too small: {0}")]
    SplitTooSmall(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("mismatched shapes: {0}")]
    MismatchedShapes(String),

    #[error("no dominant period: all non-DC power is below {threshold:e}")]
    NoDominantPeriod { threshold: f64 },

    #[error("no feasible periodic shift for window length {window} and period {period} in {n_time} steps")]
    NoFeasibleShift { window: usize, period: f64, n_time: usize },

    #[error("pooling scale must be at least 2, got {0}")]
    BadScale(usize),

    #[error("dataset too short: {0}")]
    DatasetTooShort(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("stream too short: need at least {needed} steps, got {got}")]
    StreamTooShort { needed: usize, got: usize },

    #[error("anomaly ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user input or data rather than by a broken
    /// internal invariant.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::SingularSystem(_))
    }
}
