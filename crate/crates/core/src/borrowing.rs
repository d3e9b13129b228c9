//! Blending internal and external group-membership predictions.
//!
//! `ĥ* = ĥ_I + α (ĥ_E − ĥ_I)` for `α` on a uniform grid over `[0, 1]`,
//! choosing the `α` that scores best on the internal labels. Ties go to
//! the smallest `α`, so indifference means no borrowing.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GRID_STEP: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("labels contain fewer than two classes")]
    SingleClassLabels,
    #[error("grid step {0} does not divide [0, 1] evenly")]
    InvalidGridStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BorrowMetric {
    #[default]
    Brier,
    Auc,
}

impl BorrowMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            BorrowMetric::Brier => "brier",
            BorrowMetric::Auc => "auc",
        }
    }

    fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            BorrowMetric::Brier => candidate < best,
            BorrowMetric::Auc => candidate > best,
        }
    }
}

impl std::str::FromStr for BorrowMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "brier" => Ok(BorrowMetric::Brier),
            "auc" => Ok(BorrowMetric::Auc),
            other => Err(format!("unknown borrowing metric `{other}`")),
        }
    }
}

fn check_shape(probs: &DMatrix<f64>, labels: &[usize]) -> Result<(), MetricError> {
    if probs.nrows() != labels.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.ncols()) {
        return Err(MetricError::DimensionMismatch(format!(
            "label {bad} outside {} classes",
            probs.ncols()
        )));
    }
    Ok(())
}

/// Mean over rows of `Σ_k (p_k − 1{label = k})²`.
pub fn brier_score(probs: &DMatrix<f64>, labels: &[usize]) -> Result<f64, MetricError> {
    check_shape(probs, labels)?;
    if labels.is_empty() {
        return Err(MetricError::DimensionMismatch("no rows".into()));
    }
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        for k in 0..probs.ncols() {
            let target = if k == label { 1.0 } else { 0.0 };
            let e = probs[(i, k)] - target;
            total += e * e;
        }
    }
    Ok(total / labels.len() as f64)
}

/// Mann–Whitney AUC of `scores` for `positive` against the rest, with ties
/// scored one half (via mid-ranks).
fn binary_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1..=end share their mean
        let mid = (start + 1 + end) as f64 / 2.0;
        let pos_in_block = order[start..end].iter().filter(|&&i| positive[i]).count();
        rank_sum += mid * pos_in_block as f64;
        start = end;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = n as f64 - n_pos;
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Unweighted mean of one-vs-rest AUCs over the classes present in `labels`.
pub fn multiclass_auc(probs: &DMatrix<f64>, labels: &[usize]) -> Result<f64, MetricError> {
    check_shape(probs, labels)?;
    let mut present = vec![false; probs.ncols()];
    for &l in labels {
        present[l] = true;
    }
    let classes: Vec<usize> = (0..probs.ncols()).filter(|&k| present[k]).collect();
    if classes.len() < 2 {
        return Err(MetricError::SingleClassLabels);
    }
    let total: f64 = classes
        .iter()
        .map(|&k| {
            let scores: Vec<f64> = probs.column(k).iter().copied().collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            binary_auc(&scores, &positive)
        })
        .sum();
    Ok(total / classes.len() as f64)
}

/// `h_internal + α (h_external − h_internal)` element-wise.
pub fn blend(h_external: &DMatrix<f64>, h_internal: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    h_internal.zip_map(h_external, |i, e| i + alpha * (e - i))
}

/// Number of intervals in the grid `{0, step, …, 1}`.
pub fn grid_intervals(step: f64) -> Result<usize, MetricError> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(MetricError::InvalidGridStep(step));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(MetricError::InvalidGridStep(step));
    }
    Ok(n as usize)
}

/// The grid point `j / intervals`.
pub fn grid_alpha(j: usize, intervals: usize) -> f64 {
    j as f64 / intervals as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendedMembership {
    pub alpha: f64,
    pub h_internal: DMatrix<f64>,
    pub h_external: DMatrix<f64>,
    pub h_star: DMatrix<f64>,
    pub metric_used: BorrowMetric,
    /// `(α, score)` for every grid point, ascending in `α`.
    pub metric_curve: Vec<(f64, f64)>,
}

impl BlendedMembership {
    /// No external information: `α = 0`, empty curve.
    pub fn internal_only(h_internal: DMatrix<f64>, metric: BorrowMetric) -> Self {
        BlendedMembership {
            alpha: 0.0,
            h_external: h_internal.clone(),
            h_star: h_internal.clone(),
            h_internal,
            metric_used: metric,
            metric_curve: Vec::new(),
        }
    }

    pub fn write_curve_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["alpha", "score"])?;
        for &(a, s) in &self.metric_curve {
            w.write_record([a.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every grid point and keeps the best (first best on ties).
pub fn select_alpha(
    h_external: DMatrix<f64>,
    h_internal: DMatrix<f64>,
    labels: &[usize],
    metric: BorrowMetric,
    grid_step: f64,
) -> Result<BlendedMembership, MetricError> {
    if h_external.shape() != h_internal.shape() {
        return Err(MetricError::DimensionMismatch(format!(
            "external {:?} vs internal {:?}",
            h_external.shape(),
            h_internal.shape()
        )));
    }
    check_shape(&h_internal, labels)?;
    let intervals = grid_intervals(grid_step)?;
    let score = |alpha: f64| {
        let h = blend(&h_external, &h_internal, alpha);
        match metric {
            BorrowMetric::Brier => brier_score(&h, labels),
            BorrowMetric::Auc => multiclass_auc(&h, labels),
        }
    };
    let metric_curve: Vec<(f64, f64)> = (0..=intervals)
        .into_par_iter()
        .map(|j| {
            let alpha = grid_alpha(j, intervals);
            score(alpha).map(|s| (alpha, s))
        })
        .collect::<Result<_, _>>()?;
    let mut best = metric_curve[0];
    for &point in &metric_curve[1..] {
        if metric.improves(point.1, best.1) {
            best = point;
        }
    }
    let h_star = blend(&h_external, &h_internal, best.0);
    Ok(BlendedMembership {
        alpha: best.0,
        h_internal,
        h_external,
        h_star,
        metric_used: metric,
        metric_curve,
    })
}
