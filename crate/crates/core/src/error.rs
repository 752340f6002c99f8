use thiserror::Error;

/// Errors produced by the simulation and statistics layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("drift/diffusion ratio is undefined: {0}")]
    UndefinedRatio(String),

    #[error("path blew up at time step {k}, cell {j}")]
    BlowUp { k: usize, j: usize },

    #[error("log-weight became non-finite at time step {k}")]
    WeightOverflow { k: usize },

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("no paths with tau_n = T at level n = {level} in the {arm} arm")]
    InsufficientCoverage { level: u32, arm: &'static str },

    #[error("{blown_up} of {total} paths blew up (limit is 20%); refine the grid")]
    TooManyBlowUps { blown_up: usize, total: usize },

    #[error("unsupported moment order {0} (expected 1 or 2)")]
    UnsupportedOrder(u32),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
