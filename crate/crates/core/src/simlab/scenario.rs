//! Scenario configuration, replication sweeps and their aggregation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dgp::{
    assign_predictions, generate_population, simulation_schema, to_audit_records, to_external_records, Coefficients,
    DgpSettings, Role,
};
use super::forest::{train_risk_model, ForestConfig, ForestError, RiskModel};
use super::oracle::{oracle_error_rates, OracleTruth};
use crate::borrowing::grid_intervals;
use crate::dataset::{AuditDataset, SchemaSpec};
use crate::estimators::{Method, Metric, Target};
use crate::pipeline::{fit_external_model, run_pipeline, PipelineConfig};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("risk model: {0}")]
    RiskModel(#[from] ForestError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn default_external() -> usize {
    10_000
}
fn default_train() -> usize {
    1_000
}
fn default_validation() -> usize {
    50_000
}
fn default_b() -> f64 {
    1.0
}
fn default_informative() -> usize {
    10
}
fn default_replications() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_internal: usize,
    #[serde(default = "default_external")]
    pub n_external: usize,
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_validation")]
    pub n_validation: usize,
    /// Multiplier on the external group-model slopes, in `[-1, 1]`.
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_informative")]
    pub p_informative: usize,
    #[serde(default)]
    pub p_noise: usize,
    #[serde(default)]
    pub interactions: bool,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub seed: u64,
    /// Replace the treatment model with `P(D = 1) = 0.5`.
    #[serde(default)]
    pub randomized_treatment: bool,
    #[serde(default)]
    pub coefficients: Coefficients,
    #[serde(default)]
    pub risk_model: ForestConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl ScenarioConfig {
    pub fn new(n_internal: usize, replications: usize, seed: u64) -> Self {
        ScenarioConfig {
            n_internal,
            n_external: default_external(),
            n_train: default_train(),
            n_validation: default_validation(),
            b: default_b(),
            p_informative: default_informative(),
            p_noise: 0,
            interactions: false,
            replications,
            seed,
            randomized_treatment: false,
            coefficients: Coefficients::default(),
            risk_model: ForestConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let err = |m: String| Err(SimulationError::Config(m));
        for (name, v) in [
            ("n_internal", self.n_internal),
            ("n_train", self.n_train),
            ("n_validation", self.n_validation),
            ("p_informative", self.p_informative),
            ("replications", self.replications),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if !(-1.0..=1.0).contains(&self.b) {
            return err(format!("b = {} outside [-1, 1]", self.b));
        }
        if self.interactions && self.p_informative < 4 {
            return err("interactions need at least 4 informative covariates".into());
        }
        self.coefficients
            .validate(self.p_informative)
            .map_err(SimulationError::Config)?;
        grid_intervals(self.pipeline.borrowing.grid_step).map_err(|e| SimulationError::Config(e.to_string()))?;
        Ok(())
    }

    fn effective_coefficients(&self) -> Coefficients {
        if self.randomized_treatment {
            self.coefficients.clone().randomized_treatment()
        } else {
            self.coefficients.clone()
        }
    }

    pub fn schema(&self) -> std::sync::Arc<SchemaSpec> {
        simulation_schema(self.p_informative + self.p_noise)
    }

    /// Methods every replication reports.
    pub fn methods(&self) -> Vec<Method> {
        let mut m = vec![Method::Comparison, Method::ProposedInternal];
        if self.pipeline.borrowing.enabled {
            m.push(Method::ProposedBorrowing);
        }
        m
    }
}

/// One scenario parameter varied over a list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sweep {
    #[serde(rename = "n_internal")]
    NInternal(Vec<usize>),
    #[serde(rename = "b")]
    B(Vec<f64>),
    #[serde(rename = "p_noise")]
    PNoise(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

impl SimulationConfig {
    /// The base scenario with each sweep value substituted, in sweep order.
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        let base = &self.scenario;
        match &self.sweep {
            None => vec![base.clone()],
            Some(Sweep::NInternal(v)) => v
                .iter()
                .map(|&n| ScenarioConfig {
                    n_internal: n,
                    ..base.clone()
                })
                .collect(),
            Some(Sweep::B(v)) => v.iter().map(|&b| ScenarioConfig { b, ..base.clone() }).collect(),
            Some(Sweep::PNoise(v)) => v
                .iter()
                .map(|&p| ScenarioConfig {
                    p_noise: p,
                    ..base.clone()
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let scenarios = self.scenarios();
        if scenarios.is_empty() {
            return Err(SimulationError::Config("sweep has no values".into()));
        }
        scenarios.iter().try_for_each(ScenarioConfig::validate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellValue {
    pub target: Target,
    pub metric: Metric,
    pub method: Method,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub index: usize,
    pub alpha: Option<f64>,
    pub cells: Vec<CellValue>,
    /// Set when the pipeline failed; every cell is then NA.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub q025: Option<f64>,
    pub q975: Option<f64>,
    pub na_count: usize,
    pub n_defined: usize,
}

impl Summary {
    pub fn of(values: &[Option<f64>]) -> Self {
        let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
        defined.sort_by(f64::total_cmp);
        let n = defined.len();
        Summary {
            mean: (n > 0).then(|| defined.iter().sum::<f64>() / n as f64),
            q025: quantile_sorted(&defined, 0.025),
            q975: quantile_sorted(&defined, 0.975),
            na_count: values.len() - n,
            n_defined: n,
        }
    }

    /// `q975 − q025`.
    pub fn width(&self) -> Option<f64> {
        Some(self.q975? - self.q025?)
    }
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub target: Target,
    pub metric: Metric,
    pub method: Method,
    pub summary: Summary,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub schema: std::sync::Arc<SchemaSpec>,
    pub truth: OracleTruth,
    pub replications: Vec<ReplicationResult>,
}

impl ScenarioResult {
    /// Replicate values of one cell, in replication order.
    pub fn values(&self, target: &Target, metric: Metric, method: Method) -> Vec<Option<f64>> {
        self.replications
            .iter()
            .map(|r| {
                r.cells
                    .iter()
                    .find(|c| &c.target == target && c.metric == metric && c.method == method)
                    .and_then(|c| c.value)
            })
            .collect()
    }

    pub fn alphas(&self) -> Vec<Option<f64>> {
        self.replications.iter().map(|r| r.alpha).collect()
    }

    pub fn truth_for(&self, target: &Target, metric: Metric) -> Option<f64> {
        match target {
            Target::Group(g) => self.truth.group_rate(g, metric),
            Target::Overall => self.truth.overall_rate(metric),
        }
    }

    pub fn aggregates(&self) -> Vec<AggregateRow> {
        cell_order(&self.schema, &self.config.methods())
            .into_iter()
            .map(|(target, metric, method)| AggregateRow {
                summary: Summary::of(&self.values(&target, metric, method)),
                truth: self.truth_for(&target, metric),
                target,
                metric,
                method,
            })
            .collect()
    }

    pub fn alpha_summary(&self) -> Option<Summary> {
        self.config
            .pipeline
            .borrowing
            .enabled
            .then(|| Summary::of(&self.alphas()))
    }
}

fn cell_order(schema: &SchemaSpec, methods: &[Method]) -> Vec<(Target, Metric, Method)> {
    let mut cells = Vec::new();
    let targets = schema.groups().into_iter().map(Target::Group).chain([Target::Overall]);
    for t in targets {
        for m in Metric::ALL {
            for &method in methods {
                cells.push((t.clone(), m, method));
            }
        }
    }
    cells
}

/// The risk model and validation truth shared by every replication.
pub struct ScenarioFixture {
    pub risk: RiskModel,
    pub truth: OracleTruth,
}

pub fn prepare_fixture(cfg: &ScenarioConfig) -> Result<ScenarioFixture, SimulationError> {
    let coefs = cfg.effective_coefficients();
    let settings = settings(cfg, &coefs);
    let train = generate_population(&settings, Role::Train, cfg.n_train, derive_seed(cfg.seed, 0));
    let x: Vec<Vec<f64>> = train.iter().map(|r| r.x.clone()).collect();
    let y: Vec<bool> = train.iter().map(|r| r.y).collect();
    let risk = train_risk_model(&x, &y, &cfg.risk_model, derive_seed(cfg.seed, 2))?;
    let validation = generate_population(&settings, Role::Validation, cfg.n_validation, derive_seed(cfg.seed, 1));
    let truth = oracle_error_rates(&validation, &risk);
    Ok(ScenarioFixture { risk, truth })
}

fn settings<'a>(cfg: &ScenarioConfig, coefs: &'a Coefficients) -> DgpSettings<'a> {
    DgpSettings {
        coefficients: coefs,
        p_informative: cfg.p_informative,
        p_noise: cfg.p_noise,
        interactions: cfg.interactions,
        b: cfg.b,
    }
}

/// Draws the internal audit sample of replication `index`, with `S` from
/// the shared risk model.
pub fn draw_internal(cfg: &ScenarioConfig, risk: &RiskModel, index: usize) -> AuditDataset {
    let coefs = cfg.effective_coefficients();
    let settings = settings(cfg, &coefs);
    let seed = derive_seed(cfg.seed, 1000 + index as u64);
    let mut internal = generate_population(&settings, Role::Internal, cfg.n_internal, derive_seed(seed, 0));
    assign_predictions(&settings, &mut internal, |x| risk.predict(x), derive_seed(seed, 1));
    AuditDataset::new(cfg.schema(), to_audit_records(&internal)).expect("simulated records match their schema")
}

fn run_replication(cfg: &ScenarioConfig, risk: &RiskModel, index: usize) -> ReplicationResult {
    let seed = derive_seed(cfg.seed, 1000 + index as u64);
    let ds = draw_internal(cfg, risk, index);
    let schema = ds.shared_schema();
    let methods = cfg.methods();
    let outcome = (|| {
        let external = if cfg.pipeline.borrowing.enabled {
            let coefs = cfg.effective_coefficients();
            let ext = generate_population(
                &settings(cfg, &coefs),
                Role::External,
                cfg.n_external,
                derive_seed(seed, 2),
            );
            Some(
                fit_external_model(
                    &schema,
                    &to_external_records(&ext),
                    &cfg.pipeline.models.h_external,
                    derive_seed(seed, 3),
                )
                .map_err(|e| e.to_string())?,
            )
        } else {
            None
        };
        run_pipeline(&ds, external.as_ref(), &cfg.pipeline, derive_seed(seed, 4)).map_err(|e| e.to_string())
    })();
    let order = cell_order(&schema, &methods);
    match outcome {
        Ok(out) => ReplicationResult {
            index,
            alpha: out.alpha(),
            cells: order
                .into_iter()
                .map(|(target, metric, method)| CellValue {
                    value: out.report.get(&target, metric, method).and_then(|e| e.value),
                    target,
                    metric,
                    method,
                })
                .collect(),
            error: None,
        },
        Err(e) => ReplicationResult {
            index,
            alpha: None,
            cells: order
                .into_iter()
                .map(|(target, metric, method)| CellValue {
                    target,
                    metric,
                    method,
                    value: None,
                })
                .collect(),
            error: Some(e),
        },
    }
}

/// Trains the shared risk model, computes truth, then runs every
/// replication (in parallel, merged in index order).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult, SimulationError> {
    cfg.validate()?;
    let fixture = prepare_fixture(cfg)?;
    let replications = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, &fixture.risk, r))
        .collect();
    Ok(ScenarioResult {
        config: cfg.clone(),
        schema: cfg.schema(),
        truth: fixture.truth,
        replications,
    })
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const SCENARIO_COLUMNS: [&str; 5] = ["scenario", "n_internal", "b", "p_noise", "interactions"];

fn scenario_fields(i: usize, c: &ScenarioConfig) -> Vec<String> {
    vec![
        i.to_string(),
        c.n_internal.to_string(),
        c.b.to_string(),
        c.p_noise.to_string(),
        c.interactions.to_string(),
    ]
}

fn target_label(schema: &SchemaSpec, t: &Target) -> String {
    t.label(schema)
}

/// Long format: one row per replication × cell.
pub fn write_replications_csv<W: Write>(results: &[ScenarioResult], writer: W) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = SCENARIO_COLUMNS.to_vec();
    header.extend(["replication", "group", "metric", "method", "value", "defined", "alpha"]);
    w.write_record(&header)?;
    for (i, res) in results.iter().enumerate() {
        let prefix = scenario_fields(i, &res.config);
        for rep in &res.replications {
            for c in &rep.cells {
                let mut row = prefix.clone();
                row.extend([
                    rep.index.to_string(),
                    target_label(&res.schema, &c.target),
                    c.metric.as_str().to_string(),
                    c.method.as_str().to_string(),
                    fmt(c.value),
                    c.value.is_some().to_string(),
                    fmt(rep.alpha),
                ]);
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per scenario × cell, plus one `alpha` row per scenario when
/// borrowing is enabled.
pub fn write_aggregate_csv<W: Write>(results: &[ScenarioResult], writer: W) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = SCENARIO_COLUMNS.to_vec();
    header.extend([
        "group",
        "metric",
        "method",
        "mean",
        "q025",
        "q975",
        "na_count",
        "n_defined",
        "truth",
    ]);
    w.write_record(&header)?;
    for (i, res) in results.iter().enumerate() {
        let prefix = scenario_fields(i, &res.config);
        for a in res.aggregates() {
            let mut row = prefix.clone();
            row.extend([
                target_label(&res.schema, &a.target),
                a.metric.as_str().to_string(),
                a.method.as_str().to_string(),
                fmt(a.summary.mean),
                fmt(a.summary.q025),
                fmt(a.summary.q975),
                a.summary.na_count.to_string(),
                a.summary.n_defined.to_string(),
                fmt(a.truth),
            ]);
            w.write_record(&row)?;
        }
        if let Some(s) = res.alpha_summary() {
            let mut row = prefix.clone();
            row.extend([
                "all".to_string(),
                "alpha".to_string(),
                Method::ProposedBorrowing.as_str().to_string(),
                fmt(s.mean),
                fmt(s.q025),
                fmt(s.q975),
                s.na_count.to_string(),
                s.n_defined.to_string(),
                String::new(),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
