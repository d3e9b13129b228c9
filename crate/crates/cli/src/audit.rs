//! The `audit` command: estimates every group's counterfactual error rates
//! on an internal dataset, optionally borrowing membership information from
//! an external one, and writes `report.json` and `report.csv`.

use std::collections::BTreeMap;
use std::sync::Arc;

use cferr_core::dataset::{load_external, load_internal, subgroup_counts, GroupKey, SchemaSpec};
use cferr_core::estimators::{ErrorRateReport, Method, Metric, Target};
use cferr_core::inference::{bootstrap_estimates, t_multiplier, BootstrapConfig, BootstrapResult};
use cferr_core::pipeline::{fit_external_model, run_pipeline};
use cferr_core::rng::derive_seed;
use serde::Serialize;

use crate::config::Resolved;
use crate::manifest::Manifest;
use crate::Failure;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct GroupRow {
    label: String,
    levels: BTreeMap<String, String>,
    n: usize,
    /// Keyed `d{D}_s{S}_y{Y}`.
    counts: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize)]
struct BorrowingInfo {
    metric: &'static str,
    grid_step: f64,
    alpha: f64,
    n_external: usize,
}

#[derive(Debug, Serialize)]
struct BootstrapInfo {
    b: usize,
    level: f64,
    seed: u64,
    failed_replicates: usize,
    alpha_se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct EstimateRow {
    group: String,
    metric: Metric,
    method: Method,
    value: Option<f64>,
    raw_value: Option<f64>,
    defined: bool,
    clipped: bool,
    se: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
    #[serde(rename = "B")]
    b: Option<usize>,
    na_count: Option<usize>,
    truncated_low: Option<bool>,
    truncated_high: Option<bool>,
}

#[derive(Debug, Serialize)]
struct DeltaRow {
    name: &'static str,
    group: String,
    reference: String,
    metric: Metric,
    method: Method,
    value: Option<f64>,
    se: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report {
    schema_version: u32,
    n: usize,
    groups: Vec<GroupRow>,
    reference_group: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    borrowing: Option<BorrowingInfo>,
    estimates: Vec<EstimateRow>,
    deltas: Vec<DeltaRow>,
    bootstrap: Option<BootstrapInfo>,
}

fn group_rows(schema: &SchemaSpec, counts: &BTreeMap<GroupKey, cferr_core::dataset::ConfusionCells>) -> Vec<GroupRow> {
    schema
        .groups()
        .into_iter()
        .map(|g| {
            let cells = counts[&g];
            let levels = schema
                .characteristics
                .iter()
                .zip(g.levels())
                .map(|(c, &l)| (c.name.clone(), c.levels[l as usize].clone()))
                .collect();
            let mut named = BTreeMap::new();
            for d in [false, true] {
                for s in [false, true] {
                    for y in [false, true] {
                        named.insert(format!("d{}_s{}_y{}", d as u8, s as u8, y as u8), cells.get(d, s, y));
                    }
                }
            }
            GroupRow {
                label: schema.group_label(&g),
                levels,
                n: cells.total(),
                counts: named,
            }
        })
        .collect()
}

fn reference_group(
    resolved: &Resolved,
    schema: &SchemaSpec,
    counts: &BTreeMap<GroupKey, cferr_core::dataset::ConfusionCells>,
) -> Result<GroupKey, Failure> {
    match &resolved.config.reference_group {
        Some(labels) => schema
            .group_from_labels(labels)
            .map_err(|e| Failure::Config(format!("reference_group: {e}"))),
        // Largest group; the first in schema order wins ties.
        None => Ok(schema
            .groups()
            .into_iter()
            .rev()
            .max_by_key(|g| counts[g].total())
            .expect("schema has at least one group")),
    }
}

fn estimate_rows(report: &ErrorRateReport, boot: Option<&[BootstrapResult]>, schema: &SchemaSpec) -> Vec<EstimateRow> {
    report
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let b = boot.map(|results| &results[i]);
            let interval = b.and_then(|b| b.interval);
            EstimateRow {
                group: e.target.label(schema),
                metric: e.metric,
                method: e.method,
                value: e.value,
                raw_value: e.raw_value,
                defined: e.defined(),
                clipped: e.clipped,
                se: b.and_then(|b| b.se),
                lower: interval.map(|i| i.lower),
                upper: interval.map(|i| i.upper),
                b: b.map(|b| b.b),
                na_count: b.map(|b| b.na_count),
                truncated_low: interval.map(|i| i.truncated_low),
                truncated_high: interval.map(|i| i.truncated_high),
            }
        })
        .collect()
}

/// Differences against the reference group for every other group, metric,
/// and method. With a bootstrap, replicate differences give a t-interval
/// truncated to `[-1, 1]`.
fn delta_rows(
    report: &ErrorRateReport,
    boot: Option<(&[BootstrapResult], f64)>,
    reference: &GroupKey,
    schema: &SchemaSpec,
) -> Vec<DeltaRow> {
    let reference = Target::Group(reference.clone());
    let index_of = |t: &Target, metric, method| {
        report
            .entries
            .iter()
            .position(|e| &e.target == t && e.metric == metric && e.method == method)
    };
    let mut rows = Vec::new();
    for (i, e) in report.entries.iter().enumerate() {
        if !matches!(e.target, Target::Group(_)) || e.target == reference {
            continue;
        }
        let Some(j) = index_of(&reference, e.metric, e.method) else {
            continue;
        };
        let base = &report.entries[j];
        let value = e.value.zip(base.value).map(|(a, b)| a - b);
        let (mut se, mut lower, mut upper) = (None, None, None);
        if let Some((results, level)) = boot {
            let diffs: Vec<Option<f64>> = results[i]
                .replicates
                .iter()
                .zip(&results[j].replicates)
                .map(|(a, b)| a.zip(*b).map(|(a, b)| a - b))
                .collect();
            se = cferr_core::inference::replicate_se(&diffs);
            if let (Some(v), Some(s)) = (value, se) {
                let half = t_multiplier(level, diffs.len() - 1) * s;
                lower = Some((v - half).max(-1.0));
                upper = Some((v + half).min(1.0));
            }
        }
        rows.push(DeltaRow {
            name: e.metric.delta_name(),
            group: e.target.label(schema),
            reference: reference.label(schema),
            metric: e.metric,
            method: e.method,
            value,
            se,
            lower,
            upper,
        });
    }
    rows
}

fn csv_bytes(rows: &[EstimateRow]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Failure::Data(anyhow::anyhow!("csv output: {e}")))
}

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let cfg = &resolved.config;
    let schema_path = cfg.schema.as_ref().expect("checked by resolve");
    let internal_path = cfg.internal.as_ref().expect("checked by resolve");
    let schema = Arc::new(SchemaSpec::from_json_file(schema_path)?);
    let ds = load_internal(internal_path, schema.clone())?;
    let counts = subgroup_counts(&ds);
    let reference = reference_group(resolved, &schema, &counts)?;

    let mut manifest = Manifest::new(resolved.mode, cfg)?;
    manifest.add_input(schema_path)?;
    manifest.add_input(internal_path)?;

    let mut n_external = 0;
    let external = match &cfg.external {
        Some(path) if cfg.pipeline.borrowing.enabled => {
            let records = load_external(path, &schema)?;
            manifest.add_input(path)?;
            n_external = records.len();
            Some(fit_external_model(
                &schema,
                &records,
                &cfg.pipeline.models.h_external,
                derive_seed(cfg.seed, 1),
            )?)
        }
        _ => None,
    };

    let out = run_pipeline(&ds, external.as_ref(), &cfg.pipeline, derive_seed(cfg.seed, 0))?;
    let boot = match &cfg.bootstrap {
        Some(section) => {
            let boot_cfg = BootstrapConfig {
                b: section.b,
                level: section.level,
                seed: section.seed.expect("filled by resolve"),
            };
            Some((
                bootstrap_estimates(&ds, external.as_ref(), &cfg.pipeline, &out.report, &boot_cfg)?,
                boot_cfg,
            ))
        }
        None => None,
    };

    let estimates = estimate_rows(&out.report, boot.as_ref().map(|(s, _)| s.results.as_slice()), &schema);
    let deltas = delta_rows(
        &out.report,
        boot.as_ref().map(|(s, c)| (s.results.as_slice(), c.level)),
        &reference,
        &schema,
    );
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        n: ds.len(),
        groups: group_rows(&schema, &counts),
        reference_group: schema.group_label(&reference),
        alpha: out.alpha(),
        borrowing: out.borrowing.as_ref().map(|b| BorrowingInfo {
            metric: b.metric_used.as_str(),
            grid_step: cfg.pipeline.borrowing.grid_step,
            alpha: b.alpha,
            n_external,
        }),
        estimates,
        deltas,
        bootstrap: boot.as_ref().map(|(s, c)| BootstrapInfo {
            b: c.b,
            level: c.level,
            seed: c.seed,
            failed_replicates: s.failed_replicates,
            alpha_se: cferr_core::inference::replicate_se(&s.alpha_replicates),
        }),
    };

    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    manifest.write_output(&resolved.out, "report.json", json.as_bytes())?;
    manifest.write_output(&resolved.out, "report.csv", &csv_bytes(&report.estimates)?)?;
    if let Some(b) = &out.borrowing {
        let mut curve = Vec::new();
        b.write_curve_csv(&mut curve)?;
        manifest.write_output(&resolved.out, "alpha_curve.csv", &curve)?;
    }
    manifest.finish(&resolved.out)
}
