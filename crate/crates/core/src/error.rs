use alloc::string::String;

/// Errors raised by the engine and its building blocks.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("kernel matrix not positive definite after jitter escalation")]
    NotPositiveDefinite,
    #[error("model has not been trained")]
    Untrained,
    #[error("support too small: {0}")]
    SupportTooSmall(String),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("budget exhausted: every location has been measured")]
    BudgetExhausted,
    #[error("invalid state: {0}")]
    State(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
