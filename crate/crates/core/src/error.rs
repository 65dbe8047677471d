use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("Laplace fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("training aborted at step {step}: non-finite loss {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("no duels recorded yet")]
    NoDuels,

    #[error("stale or duplicate trial submission: pending trial is {expected}, got {got}")]
    StaleTrial { expected: usize, got: usize },

    #[error("session is complete")]
    SessionComplete,

    #[error("session is not complete")]
    SessionIncomplete,

    #[error("unknown condition {0:?}")]
    UnknownCondition(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("replay diverged: {0}")]
    ReplayDiverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, actual: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
