use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum QmngError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("integration failed for mu = {mu} at t = {t}: {reason}")]
    Integration { mu: f64, t: f64, reason: String },

    #[error("manifold invariant violated: {0}")]
    Invariant(String),

    #[error("precompute needs {required_bytes} bytes, budget is {budget_bytes} bytes; reduce n")]
    MemoryBudget {
        required_bytes: u64,
        budget_bytes: u64,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QmngError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(QmngError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
