//! Stratified bootstrap intervals.
//!
//! Each replicate resamples rows with replacement inside every group, so
//! group sizes are fixed, then reruns the whole pipeline (nuisance models
//! and borrowing weight included). Intervals are `point ± t·se` with `B − 1`
//! degrees of freedom, truncated to `[0, 1]`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::AuditDataset;
use crate::estimators::{ErrorRateReport, Method, Metric, Target};
use crate::pipeline::{run_pipeline, ExternalModel, PipelineConfig};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

fn default_b() -> usize {
    200
}
fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(default = "default_b")]
    pub b: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.b < 2 {
            return Err(InferenceError::TooFewReplicates(self.b));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(InferenceError::InvalidLevel(self.level));
        }
        Ok(())
    }
}

/// A `[0, 1]`-truncated t-interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub truncated_low: bool,
    pub truncated_high: bool,
}

/// Clamps a raw interval to `[0, 1]`, flagging each side that moved.
pub fn truncate(raw_lower: f64, raw_upper: f64) -> Interval {
    let lower = raw_lower.clamp(0.0, 1.0);
    let upper = raw_upper.clamp(0.0, 1.0);
    Interval {
        lower,
        upper,
        truncated_low: lower != raw_lower,
        truncated_high: upper != raw_upper,
    }
}

/// Two-sided t quantile for `level` with `df` degrees of freedom.
pub fn t_multiplier(level: f64, df: usize) -> f64 {
    let t = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    t.inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Sample standard deviation of the defined replicates (fewer than two
/// gives `None`).
pub fn replicate_se(replicates: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = replicates.iter().flatten().copied().collect();
    if vals.len() < 2 {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    #[serde(skip)]
    pub target: Target,
    pub metric: Metric,
    pub method: Method,
    pub point: Option<f64>,
    pub replicates: Vec<Option<f64>>,
    pub se: Option<f64>,
    /// Absent when the point estimate is undefined or fewer than two
    /// replicates are defined.
    pub interval: Option<Interval>,
    pub b: usize,
    pub na_count: usize,
    pub level: f64,
    pub seed: u64,
}

impl BootstrapResult {
    /// No replicate produced a value.
    pub fn all_na(&self) -> bool {
        self.na_count == self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    /// One entry per report entry, in report order.
    pub results: Vec<BootstrapResult>,
    pub alpha_replicates: Vec<Option<f64>>,
    /// Replicates whose pipeline failed outright (all cells NA).
    pub failed_replicates: usize,
}

/// Row indices of one stratified resample: each group keeps its size.
pub fn stratified_resample(ds: &AuditDataset, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(ds.len());
    for members in ds.group_index().values() {
        for _ in 0..members.len() {
            rows.push(members[rng.gen_range(0..members.len())]);
        }
    }
    rows
}

fn summarize(point: Option<f64>, replicates: &[Option<f64>], level: f64) -> (Option<f64>, Option<Interval>, usize) {
    let b = replicates.len();
    let na_count = replicates.iter().filter(|r| r.is_none()).count();
    let se = replicate_se(replicates);
    let interval = match (point, se) {
        (Some(p), Some(se)) => {
            let half = t_multiplier(level, b - 1) * se;
            Some(truncate(p - half, p + half))
        }
        _ => None,
    };
    (se, interval, na_count)
}

/// Bootstraps every entry of `point`. The external membership model does
/// not depend on internal rows, so it is shared across replicates.
pub fn bootstrap_estimates(
    ds: &AuditDataset,
    external: Option<&ExternalModel>,
    cfg: &PipelineConfig,
    point: &ErrorRateReport,
    boot: &BootstrapConfig,
) -> Result<BootstrapSummary, InferenceError> {
    boot.validate()?;
    let replicate_reports: Vec<Option<(ErrorRateReport, Option<f64>)>> = (0..boot.b)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(boot.seed, r as u64);
            let sample = ds.select(&stratified_resample(ds, rep_seed));
            run_pipeline(&sample, external, cfg, derive_seed(rep_seed, 1))
                .ok()
                .map(|out| {
                    let alpha = out.alpha();
                    (out.report, alpha)
                })
        })
        .collect();

    let failed_replicates = replicate_reports.iter().filter(|r| r.is_none()).count();
    let alpha_replicates = replicate_reports
        .iter()
        .map(|r| r.as_ref().and_then(|(_, a)| *a))
        .collect();
    let results = point
        .entries
        .iter()
        .map(|entry| {
            let replicates: Vec<Option<f64>> = replicate_reports
                .iter()
                .map(|rep| {
                    rep.as_ref()
                        .and_then(|(report, _)| report.get(&entry.target, entry.metric, entry.method))
                        .and_then(|e| e.value)
                })
                .collect();
            let (se, interval, na_count) = summarize(entry.value, &replicates, boot.level);
            BootstrapResult {
                target: entry.target.clone(),
                metric: entry.metric,
                method: entry.method,
                point: entry.value,
                replicates,
                se,
                interval,
                b: boot.b,
                na_count,
                level: boot.level,
                seed: boot.seed,
            }
        })
        .collect();
    Ok(BootstrapSummary {
        results,
        alpha_replicates,
        failed_replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AuditRecord, Characteristic, GroupKey, SchemaSpec};
    use crate::models::MulticlassSpec;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn truncation_contract() {
        let i = truncate(-0.05, 0.30);
        assert_eq!((i.lower, i.upper), (0.0, 0.30));
        assert!(i.truncated_low && !i.truncated_high);
        let i = truncate(0.9, 1.2);
        assert_eq!((i.lower, i.upper), (0.9, 1.0));
        assert!(i.truncated_high);
    }

    #[test]
    fn t_multiplier_degrees_of_freedom() {
        // 0.975 quantiles of t with 199 and 9 degrees of freedom.
        assert!((t_multiplier(0.95, 199) - 1.971956544).abs() < 1e-6);
        assert!((t_multiplier(0.95, 9) - 2.262157163).abs() < 1e-6);
    }

    #[test]
    fn se_ignores_missing_replicates() {
        let r = [Some(1.0), None, Some(3.0), None];
        assert!((replicate_se(&r).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(replicate_se(&[Some(0.3), None]), None);
        assert_eq!(replicate_se(&[Some(0.3), Some(0.3), Some(0.3)]), Some(0.0));
    }

    fn tiny_dataset() -> AuditDataset {
        // Every row is untreated with Y=1 and S=1, so every cFNR is 0 in
        // every resample and every cFPR is undefined.
        let schema = Arc::new(SchemaSpec {
            characteristics: vec![Characteristic {
                name: "a".into(),
                levels: vec!["0".into(), "1".into()],
            }],
            treatment: "d".into(),
            outcome: "y".into(),
            prediction: "s".into(),
            covariates: vec!["x".into()],
            external_covariates: None,
        });
        let records = (0..40)
            .map(|i| AuditRecord {
                group: GroupKey::new(vec![(i % 4 == 0) as u16]),
                d: i % 3 == 0,
                y: true,
                s: true,
                x: vec![(i as f64 * 0.37).sin()],
            })
            .collect();
        AuditDataset::new(schema, records).unwrap()
    }

    fn tiny_cfg() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.models.h_internal = MulticlassSpec::softmax(1.0);
        c.models.h_internal.epochs = 50;
        c
    }

    #[test]
    fn constant_estimator_gives_point_interval() {
        let ds = tiny_dataset();
        let cfg = tiny_cfg();
        let point = run_pipeline(&ds, None, &cfg, 1).unwrap().report;
        let boot = BootstrapConfig {
            b: 20,
            level: 0.95,
            seed: 3,
        };
        let summary = bootstrap_estimates(&ds, None, &cfg, &point, &boot).unwrap();
        let fnr: Vec<_> = summary
            .results
            .iter()
            .filter(|r| r.metric == Metric::Cfnr && r.method == Method::Comparison)
            .collect();
        assert!(!fnr.is_empty());
        for r in fnr {
            assert_eq!(r.se, Some(0.0));
            let i = r.interval.unwrap();
            assert_eq!((i.lower, i.upper), (0.0, 0.0));
        }
        for r in summary.results.iter().filter(|r| r.metric == Metric::Cfpr) {
            assert!(r.all_na());
            assert!(r.interval.is_none());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let ds = tiny_dataset();
        let cfg = tiny_cfg();
        let point = run_pipeline(&ds, None, &cfg, 1).unwrap().report;
        let boot = BootstrapConfig {
            b: 1,
            level: 0.95,
            seed: 3,
        };
        assert_eq!(
            bootstrap_estimates(&ds, None, &cfg, &point, &boot).unwrap_err(),
            InferenceError::TooFewReplicates(1)
        );
    }

    #[test]
    fn resample_preserves_group_sizes() {
        let ds = tiny_dataset();
        for seed in 0..5 {
            let sample = ds.select(&stratified_resample(&ds, seed));
            for (g, rows) in ds.group_index() {
                assert_eq!(sample.group_index()[g].len(), rows.len());
            }
        }
    }

    proptest! {
        #[test]
        fn truncation_never_widens(a in -2.0f64..2.0, w in 0.0f64..2.0) {
            let i = truncate(a, a + w);
            prop_assert!(0.0 <= i.lower && i.lower <= i.upper && i.upper <= 1.0);
            if a + w >= 0.0 && a <= 1.0 {
                prop_assert!(i.lower >= a && i.upper <= a + w);
            }
        }
    }
}
