//! Bivariate ordered logistic models with quadratic penalties on
//! category-specific effects.
//!
//! Two ordinal responses with `d1` and `d2` categories are modelled through
//! marginal global logits and log global odds ratios, each linear in the
//! covariates. Coefficients are estimated by penalized Fisher scoring.

pub mod error;
pub mod estimator;
pub mod inference;
pub mod link;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod simulation;

pub use error::{BolmError, Result};
pub use model::{Dataset, Equation, EquationTerms, Group, ModelSpec, OrdinalPair, Term};
pub use estimator::{fit, Coefficient, FitOptions, FitResult};
pub use penalty::{Penalty, PenaltyConfig};
