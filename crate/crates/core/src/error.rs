use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("training budget exhausted: requested {requested} rounds with {remaining} remaining")]
    BudgetExhausted { requested: usize, remaining: usize },

    #[error("per-config cap exceeded: config {config} would reach {rounds} rounds (cap {cap})")]
    ConfigCapExceeded {
        config: usize,
        rounds: usize,
        cap: usize,
    },

    #[error("privacy budget exhausted after {capacity} releases")]
    PrivacyExhausted { capacity: usize },

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 spec error, 2 budget exhaustion, 3 I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BudgetExhausted { .. }
            | Error::ConfigCapExceeded { .. }
            | Error::PrivacyExhausted { .. } => 2,
            Error::Io(_) => 3,
            _ => 1,
        }
    }
}
