//! Counterfactual error-rate auditing for binary risk predictors.
//!
//! Estimates group-specific counterfactual false-positive and
//! false-negative rates (measured against the untreated potential outcome)
//! with inverse-propensity comparison estimators and ratio-form estimators
//! that pool information across the whole sample, optionally borrowing
//! group-membership information from an external dataset. Includes a
//! stratified bootstrap and a simulation laboratory with known truth.

pub mod borrowing;
pub mod dataset;
pub mod estimators;
pub mod inference;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod simlab;

pub use borrowing::{brier_score, multiclass_auc, select_alpha, BlendedMembership, BorrowMetric, MetricError};
pub use dataset::{
    load_external, load_internal, subgroup_counts, AuditDataset, AuditRecord, ConfusionCells, DataError,
    ExternalRecord, GroupKey, SchemaSpec,
};
pub use estimators::{
    comparison_rate, delta, estimate_all, membership_ratio, overall_rate, proposed_rate, DeltaEstimate,
    ErrorRateEstimate, ErrorRateReport, EstimateError, Method, Metric, NuisanceEstimates, Target,
};
pub use inference::{bootstrap_estimates, BootstrapConfig, BootstrapResult, BootstrapSummary, InferenceError};
pub use models::ModelError;
pub use pipeline::{fit_external_model, run_pipeline, ExternalModel, PipelineConfig, PipelineError, PipelineOutput};
pub use simlab::{run_scenario, ScenarioConfig, ScenarioResult, SimulationConfig, SimulationError};

use thiserror::Error;

/// Any failure raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}
