use thiserror::Error;

/// Errors raised by the simulator and its numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid fading parameters: {0}")]
    InvalidFading(String),

    #[error("invalid CSI latency: {0}")]
    InvalidLatency(String),

    #[error("non-finite matrix entry in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("decomposition did not converge: {0}")]
    Decomposition(&'static str),

    #[error("scheme not applicable: {0}")]
    NotApplicable(String),

    #[error("session out of order: {0}")]
    SessionOrder(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
