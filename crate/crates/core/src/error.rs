use thiserror::Error;

use crate::model::State;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("step size underflow at t = {t} (h = {h:e}); last valid state {last:?}")]
    StepUnderflow { t: f64, h: f64, last: State },

    #[error("outside the Lyapunov function domain: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{kind} record does not match its closed-form coordinates: {detail}")]
    KindMismatch { kind: String, detail: String },

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("balance relation `{relation}` violated: {detail}")]
    Balance { relation: &'static str, detail: String },

    #[error("carrying-capacity tuning failed for det B = {target:e}: {detail}")]
    Tuning { target: f64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input rather than by a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::Inadmissible(_)
                | Error::Degenerate(_)
                | Error::Precondition(_)
                | Error::Usage(_)
                | Error::KindMismatch { .. }
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
