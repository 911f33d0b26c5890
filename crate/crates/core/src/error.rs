//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("loss requires at least {required} classes, got {got}")]
    TooFewClasses { required: usize, got: usize },

    /// The DLR denominator `z_pi1 - z_pi3` fell below the guard threshold.
    /// Returned instead of an infinite or NaN loss value.
    #[error("degenerate DLR denominator: |z_pi1 - z_pi3| = {gap:e}")]
    DegenerateDenominator { gap: f64 },

    #[error("iteration {t} outside horizon [0, {total})")]
    IterationOutOfRange { t: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("model file dimensions are inconsistent: {0}")]
    InconsistentDimensions(String),

    #[error("malformed dataset: {0}")]
    MalformedDataset(String),

    /// An adversary failed the independent feasibility re-check at report
    /// time. This indicates a bug in the attack path and is never expected.
    #[error("infeasible adversary for example {example}: {detail}")]
    InfeasibleAdversary { example: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
