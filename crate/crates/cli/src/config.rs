//! Run configuration: the JSON file, command-line overrides, and the
//! fully resolved form recorded in manifests.

use std::path::{Path, PathBuf};

use cferr_core::borrowing::{grid_intervals, BorrowMetric};
use cferr_core::pipeline::PipelineConfig;
use cferr_core::simlab::SimulationConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Audit,
    Simulate,
}

fn is_default(p: &PipelineConfig) -> bool {
    *p == PipelineConfig::default()
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub b: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Derived from the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<PathBuf>,
    /// Labels of the reference group, one per characteristic; the largest
    /// group when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_group: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub pipeline: PipelineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSection>,
    /// Inline, or a path to a JSON file that is inlined on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub borrow_metric: Option<BorrowMetric>,
    pub bootstrap_b: Option<usize>,
    pub alpha_grid_step: Option<f64>,
}

/// Everything a run needs, with paths absolute and the scenario inlined.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub mode: Mode,
    pub config: RunConfig,
    pub out: PathBuf,
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

/// Reads a run config or a manifest written by an earlier run.
pub fn load(path: &Path) -> Result<RunConfig, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut body = match value.get("effective_config") {
        Some(inner) => inner.clone(),
        None => value,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    inline_scenario(&mut body, base)?;
    let mut cfg: RunConfig =
        serde_json::from_value(body).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let absolute = |p: &mut Option<PathBuf>| {
        if let Some(inner) = p {
            if inner.is_relative() {
                *inner = base.join(&*inner);
            }
        }
    };
    absolute(&mut cfg.schema);
    absolute(&mut cfg.internal);
    absolute(&mut cfg.external);
    absolute(&mut cfg.output);
    Ok(cfg)
}

/// Replaces a scenario path with the file's contents and lets the scenario
/// inherit the run seed when it has none of its own.
fn inline_scenario(body: &mut serde_json::Value, base: &Path) -> Result<(), Failure> {
    let run_seed = body.get("seed").cloned();
    let Some(scenario) = body.get_mut("scenario") else {
        return Ok(());
    };
    if let Some(rel) = scenario.as_str() {
        let p = base.join(rel);
        let text =
            std::fs::read_to_string(&p).map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
        *scenario = serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
    }
    if let (Some(inner), Some(seed)) = (scenario.get_mut("scenario").and_then(|s| s.as_object_mut()), run_seed) {
        inner.entry("seed").or_insert(seed);
    }
    Ok(())
}

fn apply_borrowing(p: &mut PipelineConfig, o: &Overrides) {
    if let Some(m) = o.borrow_metric {
        p.borrowing.metric = m;
    }
    if let Some(s) = o.alpha_grid_step {
        p.borrowing.grid_step = s;
    }
}

/// Applies overrides, checks mode-specific requirements, and returns the
/// configuration that manifests record.
pub fn resolve(mut cfg: RunConfig, o: &Overrides) -> Result<Resolved, Failure> {
    let mode = o
        .mode
        .or(cfg.mode)
        .ok_or_else(|| config_error("mode is required (config `mode` or --mode)"))?;
    cfg.mode = Some(mode);
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    let out = o
        .out
        .clone()
        .or(cfg.output.take())
        .ok_or_else(|| config_error("output directory is required (config `output` or --out)"))?;

    match mode {
        Mode::Audit => {
            if cfg.schema.is_none() || cfg.internal.is_none() {
                return Err(config_error("audit mode needs `schema` and `internal`"));
            }
            apply_borrowing(&mut cfg.pipeline, o);
            if let Some(b) = o.bootstrap_b {
                let section = cfg.bootstrap.get_or_insert(BootstrapSection {
                    b,
                    level: default_level(),
                    seed: None,
                });
                section.b = b;
            }
            if let Some(boot) = &mut cfg.bootstrap {
                if boot.b < 2 {
                    return Err(config_error(format!("bootstrap needs b >= 2, got {}", boot.b)));
                }
                if !(boot.level > 0.0 && boot.level < 1.0) {
                    return Err(config_error(format!("bootstrap level {} outside (0, 1)", boot.level)));
                }
                boot.seed.get_or_insert(cferr_core::rng::derive_seed(cfg.seed, 2));
            }
            grid_intervals(cfg.pipeline.borrowing.grid_step).map_err(|e| config_error(e.to_string()))?;
            cfg.scenario = None;
        }
        Mode::Simulate => {
            let Some(sim) = &mut cfg.scenario else {
                return Err(config_error("simulate mode needs `scenario`"));
            };
            sim.scenario.seed = cfg.seed;
            apply_borrowing(&mut sim.scenario.pipeline, o);
            sim.validate().map_err(|e| config_error(e.to_string()))?;
            cfg.schema = None;
            cfg.internal = None;
            cfg.external = None;
            cfg.bootstrap = None;
            cfg.reference_group = None;
            cfg.pipeline = PipelineConfig::default();
        }
    }
    Ok(Resolved { mode, config: cfg, out })
}
