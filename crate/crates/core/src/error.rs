use thiserror::Error;

/// Errors raised by model construction, the link map and the estimator.
///
/// Numerical failure of Fisher scoring is *not* an error: it is recorded in
/// [`crate::estimator::FitResult::fisher_scoring_failed`].
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BolmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("category ({r}, {c}) out of range for a {d1}x{d2} table")]
    CategoryOutOfRange { r: usize, c: usize, d1: usize, d2: usize },

    #[error("cell ({row}, {col}) has non-positive probability {value}")]
    NonPositiveCell { row: usize, col: usize, value: f64 },

    #[error("cell probabilities sum to {0}, expected 1")]
    NotNormalized(f64),

    #[error("odds ratio must be positive, got {0}")]
    InvalidOddsRatio(f64),

    #[error("cumulative probability {0} outside (0, 1)")]
    InvalidCumulative(f64),

    #[error("negative discriminant {0} in the Plackett inversion")]
    NegativeDiscriminant(f64),

    /// The predictor vector has no strictly positive probability table.
    #[error("predictor is incompatible: cell ({row}, {col}) would have probability {value}")]
    IncompatibleEta { row: usize, col: usize, value: f64 },

    #[error("singular matrix in {context}; near-null direction {direction:?}")]
    SingularMatrix {
        context: &'static str,
        direction: Vec<f64>,
    },

    #[error("penalty configuration: {0}")]
    Penalty(String),

    #[error("models are not nested: {0}")]
    NotNested(String),
}

pub type Result<T> = std::result::Result<T, BolmError>;
