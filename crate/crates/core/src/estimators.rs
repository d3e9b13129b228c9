//! Counterfactual error-rate estimators.
//!
//! * comparison: inverse-propensity weighted rates computed inside one group,
//!   using only untreated rows with the matching outcome;
//! * overall: the same weighted rate over every row;
//! * proposed: the overall rate scaled by a group-membership ratio built
//!   from the untreated outcome regressions `μ̂₀`, `μ̂₀*` and the membership
//!   probabilities `ĥ`, which draws on every row of the sample.
//!
//! An estimate whose divisor vanishes is reported as undefined rather than
//! as an error, so replication sweeps can count how often it happens.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AuditDataset, GroupKey, SchemaSpec};
use crate::models::OutcomeNuisances;

/// Divisors below this are treated as zero.
pub const DENOMINATOR_GUARD: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("nuisance vector `{name}` has length {found}, dataset has {expected} rows")]
    LengthMismatch {
        name: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("membership matrix has {found} columns, schema has {expected} groups")]
    GroupCountMismatch { expected: usize, found: usize },
    #[error("membership row {row} sums to {sum}")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("difference needs two defined estimates")]
    UndefinedOperand,
    #[error("difference operands have different metric or method")]
    MismatchedOperands,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "cFPR")]
    Cfpr,
    #[serde(rename = "cFNR")]
    Cfnr,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Cfpr, Metric::Cfnr];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cfpr => "cFPR",
            Metric::Cfnr => "cFNR",
        }
    }

    pub fn delta_name(self) -> &'static str {
        match self {
            Metric::Cfpr => "delta+",
            Metric::Cfnr => "delta-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "comparison")]
    Comparison,
    #[serde(rename = "proposed-internal")]
    ProposedInternal,
    #[serde(rename = "proposed-borrowing")]
    ProposedBorrowing,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Comparison => "comparison",
            Method::ProposedInternal => "proposed-internal",
            Method::ProposedBorrowing => "proposed-borrowing",
        }
    }
}

/// A protected group or the whole population.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Group(GroupKey),
    Overall,
}

impl Target {
    pub fn label(&self, schema: &SchemaSpec) -> String {
        match self {
            Target::Group(g) => schema.group_label(g),
            Target::Overall => "overall".to_string(),
        }
    }
}

/// Fitted nuisance values for every row of an [`AuditDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    pub pi_hat: Vec<f64>,
    pub mu0_s1: Vec<f64>,
    pub mu0_s0: Vec<f64>,
    pub mu0_star: Vec<f64>,
    /// `n × K` membership probabilities, columns in schema group order.
    pub h_hat: DMatrix<f64>,
}

impl NuisanceEstimates {
    pub fn new(ds: &AuditDataset, outcome: OutcomeNuisances, h_hat: DMatrix<f64>) -> Result<Self, EstimateError> {
        let n = ds.len();
        for (name, v) in [
            ("pi_hat", &outcome.pi_hat),
            ("mu0_s1", &outcome.mu0_s1),
            ("mu0_s0", &outcome.mu0_s0),
            ("mu0_star", &outcome.mu0_star),
        ] {
            if v.len() != n {
                return Err(EstimateError::LengthMismatch {
                    name,
                    expected: n,
                    found: v.len(),
                });
            }
        }
        check_membership(ds, &h_hat)?;
        Ok(NuisanceEstimates {
            pi_hat: outcome.pi_hat,
            mu0_s1: outcome.mu0_s1,
            mu0_s0: outcome.mu0_s0,
            mu0_star: outcome.mu0_star,
            h_hat,
        })
    }
}

pub(crate) fn check_membership(ds: &AuditDataset, h: &DMatrix<f64>) -> Result<(), EstimateError> {
    if h.nrows() != ds.len() {
        return Err(EstimateError::LengthMismatch {
            name: "h_hat",
            expected: ds.len(),
            found: h.nrows(),
        });
    }
    if h.ncols() != ds.schema().n_groups() {
        return Err(EstimateError::GroupCountMismatch {
            expected: ds.schema().n_groups(),
            found: h.ncols(),
        });
    }
    for (row, r) in h.row_iter().enumerate() {
        let sum = r.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EstimateError::NotRowStochastic { row, sum });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRateEstimate {
    pub target: Target,
    pub metric: Metric,
    pub method: Method,
    /// Estimate clipped to `[0, 1]`; `None` when undefined.
    pub value: Option<f64>,
    pub raw_value: Option<f64>,
    pub clipped: bool,
}

impl ErrorRateEstimate {
    pub fn defined(&self) -> bool {
        self.value.is_some()
    }

    fn undefined(target: Target, metric: Metric, method: Method) -> Self {
        ErrorRateEstimate {
            target,
            metric,
            method,
            value: None,
            raw_value: None,
            clipped: false,
        }
    }

    fn from_raw(target: Target, metric: Metric, method: Method, raw: Option<f64>) -> Self {
        let value = raw.map(|r| r.clamp(0.0, 1.0));
        ErrorRateEstimate {
            target,
            metric,
            method,
            value,
            raw_value: raw,
            clipped: matches!((raw, value), (Some(r), Some(v)) if r != v),
        }
    }
}

fn safe_ratio(num: f64, den: f64) -> Option<f64> {
    if num.is_finite() && den.is_finite() && den >= DENOMINATOR_GUARD {
        Some(num / den)
    } else {
        None
    }
}

/// Weighted numerator and denominator over the given rows:
/// cFPR uses untreated `Y = 0` rows (numerator: `S = 1`), cFNR uses
/// untreated `Y = 1` rows (numerator: `S = 0`); weight `1/(1 − π̂)`.
fn ipw_sums(ds: &AuditDataset, pi_hat: &[f64], rows: impl Iterator<Item = usize>, metric: Metric) -> (f64, f64) {
    let recs = ds.records();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in rows {
        let r = &recs[i];
        if r.d {
            continue;
        }
        let (in_den, in_num) = match metric {
            Metric::Cfpr => (!r.y, r.s),
            Metric::Cfnr => (r.y, !r.s),
        };
        if in_den {
            let w = 1.0 / (1.0 - pi_hat[i]);
            den += w;
            if in_num {
                num += w;
            }
        }
    }
    (num, den)
}

/// Weighted within-group estimator (comparison method).
pub fn comparison_rate(ds: &AuditDataset, pi_hat: &[f64], group: &GroupKey, metric: Metric) -> ErrorRateEstimate {
    let target = Target::Group(group.clone());
    let Some(rows) = ds.group_index().get(group) else {
        return ErrorRateEstimate::undefined(target, metric, Method::Comparison);
    };
    let (num, den) = ipw_sums(ds, pi_hat, rows.iter().copied(), metric);
    ErrorRateEstimate::from_raw(target, metric, Method::Comparison, safe_ratio(num, den))
}

/// Weighted estimator over all rows.
pub fn overall_rate(ds: &AuditDataset, pi_hat: &[f64], metric: Metric) -> ErrorRateEstimate {
    let (num, den) = ipw_sums(ds, pi_hat, 0..ds.len(), metric);
    ErrorRateEstimate::from_raw(Target::Overall, metric, Method::Comparison, safe_ratio(num, den))
}

fn ratio_with_membership(
    ds: &AuditDataset,
    nuis: &NuisanceEstimates,
    h: &DMatrix<f64>,
    group: &GroupKey,
    metric: Metric,
) -> Option<f64> {
    let col = ds.schema().group_position(group);
    let mut num_group = 0.0;
    let mut num_all = 0.0;
    let mut den_group = 0.0;
    let mut den_all = 0.0;
    for (i, r) in ds.records().iter().enumerate() {
        let (in_stratum, w, w_star) = match metric {
            Metric::Cfnr => (!r.s, nuis.mu0_s0[i], nuis.mu0_star[i]),
            Metric::Cfpr => (r.s, 1.0 - nuis.mu0_s1[i], 1.0 - nuis.mu0_star[i]),
        };
        if in_stratum {
            num_all += w;
            if &r.group == group {
                num_group += w;
            }
        }
        den_group += w_star * h[(i, col)];
        den_all += w_star;
    }
    let numerator = safe_ratio(num_group, num_all)?;
    let denominator = safe_ratio(den_group, den_all)?;
    safe_ratio(numerator, denominator)
}

/// `P(A=a | Y⁰=y, S=s) / P(A=a | Y⁰=y)` estimated from the outcome
/// regressions and `nuis.h_hat`; `(y, s) = (1, 0)` for cFNR and `(0, 1)` for
/// cFPR. `None` when a divisor vanishes.
pub fn membership_ratio(ds: &AuditDataset, nuis: &NuisanceEstimates, group: &GroupKey, metric: Metric) -> Option<f64> {
    ratio_with_membership(ds, nuis, &nuis.h_hat, group, metric)
}

fn scale_overall(overall: &ErrorRateEstimate, ratio: Option<f64>) -> Option<f64> {
    Some(overall.raw_value? * ratio?)
}

/// Overall rate times the membership ratio, clipped to `[0, 1]`.
pub fn proposed_rate(
    ds: &AuditDataset,
    nuis: &NuisanceEstimates,
    overall: &ErrorRateEstimate,
    group: &GroupKey,
    metric: Metric,
) -> ErrorRateEstimate {
    let raw = scale_overall(overall, membership_ratio(ds, nuis, group, metric));
    ErrorRateEstimate::from_raw(Target::Group(group.clone()), metric, Method::ProposedInternal, raw)
}

/// [`proposed_rate`] with a replacement membership matrix (e.g. the blended
/// internal/external one), labelled as `method`.
pub fn proposed_rate_with(
    ds: &AuditDataset,
    nuis: &NuisanceEstimates,
    h: &DMatrix<f64>,
    overall: &ErrorRateEstimate,
    group: &GroupKey,
    metric: Metric,
    method: Method,
) -> ErrorRateEstimate {
    let raw = scale_overall(overall, ratio_with_membership(ds, nuis, h, group, metric));
    ErrorRateEstimate::from_raw(Target::Group(group.clone()), metric, method, raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEstimate {
    pub metric: Metric,
    pub method: Method,
    pub group_a: Target,
    pub group_b: Target,
    pub value: f64,
}

/// `rate_a − rate_b` (Δ⁺ for cFPR, Δ⁻ for cFNR).
pub fn delta(rate_a: &ErrorRateEstimate, rate_b: &ErrorRateEstimate) -> Result<DeltaEstimate, EstimateError> {
    if rate_a.metric != rate_b.metric || rate_a.method != rate_b.method {
        return Err(EstimateError::MismatchedOperands);
    }
    match (rate_a.value, rate_b.value) {
        (Some(a), Some(b)) => Ok(DeltaEstimate {
            metric: rate_a.metric,
            method: rate_a.method,
            group_a: rate_a.target.clone(),
            group_b: rate_b.target.clone(),
            value: a - b,
        }),
        _ => Err(EstimateError::UndefinedOperand),
    }
}

/// Every estimate of one run, ordered by group (schema order, overall last),
/// then metric, then method.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRateReport {
    pub entries: Vec<ErrorRateEstimate>,
}

impl ErrorRateReport {
    pub fn get(&self, target: &Target, metric: Metric, method: Method) -> Option<&ErrorRateEstimate> {
        self.entries
            .iter()
            .find(|e| &e.target == target && e.metric == metric && e.method == method)
    }

    /// Differences of every other group against `reference`, for each metric
    /// and method where both estimates are defined.
    pub fn deltas_against(&self, reference: &GroupKey) -> Vec<DeltaEstimate> {
        let reference = Target::Group(reference.clone());
        self.entries
            .iter()
            .filter(|e| matches!(e.target, Target::Group(_)) && e.target != reference)
            .filter_map(|e| {
                let base = self.get(&reference, e.metric, e.method)?;
                delta(e, base).ok()
            })
            .collect()
    }
}

/// Evaluates `methods` for every schema group and the overall population.
/// Groups with no rows are undefined under every method;
/// [`Method::ProposedBorrowing`] is undefined when `h_borrowed` is `None`.
pub fn estimate_all(
    ds: &AuditDataset,
    nuis: &NuisanceEstimates,
    h_borrowed: Option<&DMatrix<f64>>,
    methods: &[Method],
) -> ErrorRateReport {
    let overall: Vec<ErrorRateEstimate> = Metric::ALL.iter().map(|&m| overall_rate(ds, &nuis.pi_hat, m)).collect();
    let mut entries = Vec::new();
    let targets = ds
        .schema()
        .groups()
        .into_iter()
        .map(Target::Group)
        .chain(std::iter::once(Target::Overall));
    for target in targets {
        for (metric, overall) in Metric::ALL.iter().copied().zip(&overall) {
            for &method in methods {
                let entry = match &target {
                    Target::Overall => match method {
                        Method::ProposedBorrowing if h_borrowed.is_none() => {
                            ErrorRateEstimate::undefined(Target::Overall, metric, method)
                        }
                        _ => ErrorRateEstimate {
                            method,
                            ..overall.clone()
                        },
                    },
                    Target::Group(g) if !ds.group_index().contains_key(g) => {
                        ErrorRateEstimate::undefined(target.clone(), metric, method)
                    }
                    Target::Group(g) => match method {
                        Method::Comparison => comparison_rate(ds, &nuis.pi_hat, g, metric),
                        Method::ProposedInternal => proposed_rate(ds, nuis, overall, g, metric),
                        Method::ProposedBorrowing => match h_borrowed {
                            Some(h) => proposed_rate_with(ds, nuis, h, overall, g, metric, method),
                            None => ErrorRateEstimate::undefined(target.clone(), metric, method),
                        },
                    },
                };
                entries.push(entry);
            }
        }
    }
    ErrorRateReport { entries }
}
