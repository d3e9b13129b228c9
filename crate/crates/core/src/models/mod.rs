//! Nuisance models: binary regressions for the propensity score and the
//! untreated outcome regressions, multiclass models for group membership,
//! and k-fold cross-fitting.

pub mod crossfit;
pub mod logistic;
pub mod multiclass;

use nalgebra::DMatrix;
use thiserror::Error;

pub use crossfit::{cross_fit, propensity_design, CrossFitPlan, OutcomeModelSpecs, OutcomeNuisances};
pub use logistic::{fit_binary, fit_logistic, fit_with_spec, predict_binary, BinaryKind, BinaryModel, BinaryModelSpec};
pub use multiclass::{
    fit_multiclass, predict_multiclass, MulticlassKind, MulticlassModel, MulticlassObjective, MulticlassSpec,
};

/// Lower clamp for predicted probabilities (upper clamp is `1 − PROB_EPS`).
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("logistic fit diverged (separation); refit with l2 > 0")]
    Separation,
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("no training rows")]
    EmptyData,
    #[error("{rows} rows cannot fit {needed} classes")]
    InsufficientRows { rows: usize, needed: usize },
    #[error("no feasible fold assignment after {attempts} draws")]
    InfeasibleFolds { attempts: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}
