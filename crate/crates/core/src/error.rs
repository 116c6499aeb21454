use thiserror::Error;

/// Errors produced by the pricing library.
#[derive(Debug, Error)]
pub enum PricingError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A vanilla learner met a period in which no price was ever observed.
    #[error("period {period} has no observed prices; the method cannot act")]
    Unlearnable { period: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PricingError>;

pub(crate) fn invalid(msg: impl Into<String>) -> PricingError {
    PricingError::InvalidInput(msg.into())
}
