use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("class `{0}` has no samples")]
    EmptyClass(String),
    #[error("batch has no item with a positive class")]
    EmptyBatch,
    #[error("count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },
    #[error("invalid thresholds: alpha1={alpha1} alpha2={alpha2}")]
    InvalidThresholds { alpha1: f64, alpha2: f64 },
    #[error("need {needed} classes, only {available} available")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("empty reference set")]
    EmptyReference,
    #[error("empty set")]
    EmptySet,
    #[error("class name `{0}` is empty after normalization")]
    EmptyName(String),
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
