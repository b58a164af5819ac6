use thiserror::Error;

/// Errors raised by the filtering and simulation routines.
#[derive(Debug, Error)]
pub enum FusionError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("particle count must be at least 1")]
    EmptyParticleSet,

    #[error("all particle log-likelihoods are -inf; weights collapsed")]
    WeightCollapse,

    #[error("every candidate marginal likelihood underflowed")]
    ModelUpdateDegenerate,

    #[error("modality count {0} outside supported range 1..=16")]
    ModalityCountOutOfRange(usize),

    #[error("unknown scenario {0}; built-in scenarios are 1..=4")]
    UnknownScenario(u32),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid model parameter: {0}")]
    InvalidModel(String),

    #[error("frame time index {got} does not follow {prev}")]
    NonConsecutiveFrame { prev: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FusionError>;
