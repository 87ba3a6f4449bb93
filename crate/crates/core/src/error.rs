use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },
    #[error("operation `{0}` is not registered in the differentiation engine")]
    UnregisteredOp(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("incompatible networks at layer {layer}: {reason}")]
    Incompatible { layer: usize, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("fusion partition: {0}")]
    Partition(String),
    #[error("state is not on the self-fusion submanifold: {0}")]
    OffSubmanifold(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves (divergence,
    /// non-finite probes) rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::OffSubmanifold(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
