use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite field")]
    NonFiniteField,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("exponent p = {p} is outside the admissible range for d = {d}")]
    NotAdmissible { p: f64, d: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("trajectory has no noise log; enable noise recording for reweighting")]
    MissingNoiseLog,

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("range condition violated: {0}")]
    RangeCondition(String),

    #[error("blow-up signal at t = {0}")]
    BlowUp(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
