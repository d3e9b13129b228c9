//! One full estimation pass: nuisance models, optional borrowing, and the
//! report of every estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::borrowing::{select_alpha, BlendedMembership, BorrowMetric, MetricError, DEFAULT_GRID_STEP};
use crate::dataset::{external_covariates, AuditDataset, ExternalRecord, SchemaSpec};
use crate::estimators::{estimate_all, ErrorRateReport, EstimateError, Method, NuisanceEstimates};
use crate::models::{
    cross_fit, fit_multiclass, predict_multiclass, BinaryModelSpec, ModelError, MulticlassModel, MulticlassSpec,
    OutcomeModelSpecs,
};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty internal dataset")]
    EmptyDataset,
    #[error("nuisance model: {0}")]
    Model(#[from] ModelError),
    #[error("estimator: {0}")]
    Estimate(#[from] EstimateError),
    #[error("borrowing: {0}")]
    Metric(#[from] MetricError),
}

fn default_k() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub pi: BinaryModelSpec,
    #[serde(default)]
    pub mu0: BinaryModelSpec,
    #[serde(default)]
    pub mu0_star: BinaryModelSpec,
    #[serde(default)]
    pub h_internal: MulticlassSpec,
    #[serde(default)]
    pub h_external: MulticlassSpec,
    /// `1` fits every outcome model on the full sample.
    #[serde(default = "default_k")]
    pub crossfit_k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            pi: BinaryModelSpec::default(),
            mu0: BinaryModelSpec::default(),
            mu0_star: BinaryModelSpec::default(),
            h_internal: MulticlassSpec::default(),
            h_external: MulticlassSpec::default(),
            crossfit_k: default_k(),
        }
    }
}

impl ModelConfig {
    pub fn outcome_specs(&self) -> OutcomeModelSpecs {
        OutcomeModelSpecs {
            pi: self.pi.clone(),
            mu0: self.mu0.clone(),
            mu0_star: self.mu0_star.clone(),
        }
    }
}

fn yes() -> bool {
    true
}
fn default_step() -> f64 {
    DEFAULT_GRID_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorrowingConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub metric: BorrowMetric,
    #[serde(default = "default_step")]
    pub grid_step: f64,
}

impl Default for BorrowingConfig {
    fn default() -> Self {
        BorrowingConfig {
            enabled: true,
            metric: BorrowMetric::Brier,
            grid_step: DEFAULT_GRID_STEP,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub models: ModelConfig,
    #[serde(default)]
    pub borrowing: BorrowingConfig,
}

/// A group-membership model trained on external data, predicting from the
/// shared covariates. `model` is `None` when the external data was empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalModel {
    pub model: Option<MulticlassModel>,
}

/// Fits `h_E` on the external records.
pub fn fit_external_model(
    schema: &SchemaSpec,
    records: &[ExternalRecord],
    spec: &MulticlassSpec,
    seed: u64,
) -> Result<ExternalModel, ModelError> {
    if records.is_empty() {
        return Ok(ExternalModel { model: None });
    }
    let x = external_covariates(records);
    let labels: Vec<usize> = records.iter().map(|r| schema.group_position(&r.group)).collect();
    let model = fit_membership(&x, &labels, schema.n_groups(), spec, seed)?;
    Ok(ExternalModel { model: Some(model) })
}

/// Multiclass fit that falls back to a constant model on single-class labels.
fn fit_membership(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    spec: &MulticlassSpec,
    seed: u64,
) -> Result<MulticlassModel, ModelError> {
    match fit_multiclass(x, labels, n_classes, spec, spec.seed.unwrap_or(seed)) {
        Err(ModelError::DegenerateLabels) => Ok(MulticlassModel::constant(labels[0], n_classes, x.ncols())),
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub nuisances: NuisanceEstimates,
    /// Present when borrowing is enabled and an external source was given.
    pub borrowing: Option<BlendedMembership>,
    pub report: ErrorRateReport,
}

impl PipelineOutput {
    pub fn alpha(&self) -> Option<f64> {
        self.borrowing.as_ref().map(|b| b.alpha)
    }
}

/// Fits every nuisance model on `ds`, selects `α` when `external` is given
/// and borrowing is enabled, and evaluates all estimators.
pub fn run_pipeline(
    ds: &AuditDataset,
    external: Option<&ExternalModel>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutput, PipelineError> {
    if ds.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let outcome = cross_fit(
        ds,
        &cfg.models.outcome_specs(),
        cfg.models.crossfit_k,
        derive_seed(seed, 0),
    )?;
    let labels = ds.group_positions();
    let k = ds.schema().n_groups();
    let h_model = fit_membership(
        &ds.covariates(),
        &labels,
        k,
        &cfg.models.h_internal,
        derive_seed(seed, 1),
    )?;
    let h_internal = predict_multiclass(&h_model, &ds.covariates())?;

    let borrowing = match external {
        Some(ext) if cfg.borrowing.enabled => Some(match &ext.model {
            None => BlendedMembership::internal_only(h_internal.clone(), cfg.borrowing.metric),
            Some(model) => {
                let h_external = predict_multiclass(model, &ds.shared_covariates())?;
                match select_alpha(
                    h_external,
                    h_internal.clone(),
                    &labels,
                    cfg.borrowing.metric,
                    cfg.borrowing.grid_step,
                ) {
                    // AUC is undefined with one observed group; keep internal.
                    Err(MetricError::SingleClassLabels) => {
                        BlendedMembership::internal_only(h_internal.clone(), cfg.borrowing.metric)
                    }
                    other => other?,
                }
            }
        }),
        _ => None,
    };

    let nuisances = NuisanceEstimates::new(ds, outcome, h_internal)?;
    let mut methods = vec![Method::Comparison, Method::ProposedInternal];
    if borrowing.is_some() {
        methods.push(Method::ProposedBorrowing);
    }
    let report = estimate_all(ds, &nuisances, borrowing.as_ref().map(|b| &b.h_star), &methods);
    Ok(PipelineOutput {
        nuisances,
        borrowing,
        report,
    })
}
