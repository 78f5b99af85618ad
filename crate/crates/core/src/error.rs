use thiserror::Error;

/// Errors raised by the library. Expected negative outcomes (no winning
/// strategy, aborted episodes) are values, not errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x:.3}, {y:.3}) lies outside the workspace")]
    OutsideWorkspace { x: f64, y: f64 },

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("game construction failed: {0}")]
    Construction(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("plant rejected step: {0}")]
    StepRejected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
