//! Binary logistic regression with an optional ridge penalty.
//!
//! The default solver is IRLS (Newton-Raphson on the penalized Bernoulli
//! log-likelihood) with step halving, so the penalized log-likelihood never
//! decreases between accepted iterations. A plain gradient-ascent solver is
//! kept for comparison and for designs where forming `XᵀWX` is unwanted.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{with_intercept, ModelError, PROB_EPS};

const MAX_IRLS_ITER: usize = 100;
const STEP_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryKind {
    #[serde(rename = "logistic-IRLS", alias = "logistic-irls")]
    LogisticIrls,
    #[serde(rename = "logistic-gd")]
    LogisticGd,
}

/// How to fit one binary nuisance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryModelSpec {
    #[serde(default = "default_kind")]
    pub kind: BinaryKind,
    #[serde(default)]
    pub l2: f64,
    /// Ridge penalty used for a refit when the unpenalized fit hits
    /// separation or a singular design. `None` surfaces the error instead.
    #[serde(default = "default_fallback")]
    pub fallback_l2: Option<f64>,
}

fn default_kind() -> BinaryKind {
    BinaryKind::LogisticIrls
}

fn default_fallback() -> Option<f64> {
    Some(1.0)
}

impl Default for BinaryModelSpec {
    fn default() -> Self {
        BinaryModelSpec {
            kind: BinaryKind::LogisticIrls,
            l2: 0.0,
            fallback_l2: default_fallback(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryModel {
    pub kind: BinaryKind,
    /// Intercept first, then one coefficient per column of the design.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized log-likelihood at the start and after every accepted step.
    pub log_likelihood_trace: Vec<f64>,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `Σ yᵢηᵢ − log(1 + e^ηᵢ) − (l2/2)‖β‖²`; the penalty covers the intercept too.
pub fn penalized_log_likelihood(design: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let eta = design * beta;
    let ll: f64 = eta.iter().zip(y).map(|(&e, &yi)| yi * e - softplus(e)).sum();
    ll - 0.5 * l2 * beta.norm_squared()
}

/// Fits `P(y = 1 | x) = σ(β₀ + xᵀβ)`. `x` has no intercept column.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[bool], l2: f64) -> Result<BinaryModel, ModelError> {
    fit_binary(x, y, BinaryKind::LogisticIrls, l2)
}

pub fn fit_binary(x: &DMatrix<f64>, y: &[bool], kind: BinaryKind, l2: f64) -> Result<BinaryModel, ModelError> {
    if x.nrows() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if y.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("l2 = {l2}")));
    }
    let design = with_intercept(x);
    let yv: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
    match kind {
        BinaryKind::LogisticIrls => irls(&design, &yv, l2),
        BinaryKind::LogisticGd => gradient_ascent(&design, &yv, l2),
    }
}

/// Fits with `spec`, retrying once with `spec.fallback_l2` on separation or
/// a singular design.
pub fn fit_with_spec(x: &DMatrix<f64>, y: &[bool], spec: &BinaryModelSpec) -> Result<BinaryModel, ModelError> {
    match fit_binary(x, y, spec.kind, spec.l2) {
        Err(ModelError::Separation | ModelError::SingularDesign) if spec.fallback_l2.is_some() => {
            let l2 = spec.fallback_l2.unwrap_or_default();
            fit_binary(x, y, spec.kind, l2)
        }
        other => other,
    }
}

fn irls(design: &DMatrix<f64>, y: &[f64], l2: f64) -> Result<BinaryModel, ModelError> {
    let (n, q) = design.shape();
    let mut beta = DVector::<f64>::zeros(q);
    let mut ll = penalized_log_likelihood(design, y, &beta, l2);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_IRLS_ITER {
        iterations += 1;
        let eta = design * &beta;
        let mut weighted = design.clone();
        let mut resid = DVector::<f64>::zeros(n);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let w = (p * (1.0 - p)).max(1e-12);
            resid[i] = y[i] - p;
            weighted.row_mut(i).scale_mut(w.sqrt());
        }
        let mut hessian = weighted.transpose() * &weighted;
        for j in 0..q {
            hessian[(j, j)] += l2;
        }
        let grad = design.transpose() * resid - &beta * l2;
        let step = solve_spd(hessian, &grad)?;

        // Step halving keeps the penalized log-likelihood monotone.
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let candidate = &beta + &step * t;
            let cand_ll = penalized_log_likelihood(design, y, &candidate, l2);
            if cand_ll >= ll {
                accepted = Some((candidate, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let max_step = step.amax() * t;
        match accepted {
            Some((candidate, cand_ll)) => {
                beta = candidate;
                ll = cand_ll;
                trace.push(ll);
            }
            None => {
                // No ascent direction left at machine precision.
                converged = step.amax() < 1e-6;
                break;
            }
        }
        if l2 == 0.0 && beta.amax() > SEPARATION_BOUND {
            return Err(ModelError::Separation);
        }
        if max_step < STEP_TOL {
            converged = true;
            break;
        }
    }

    Ok(BinaryModel {
        kind: BinaryKind::LogisticIrls,
        coefficients: beta.iter().copied().collect(),
        converged,
        iterations,
        log_likelihood_trace: trace,
    })
}

fn solve_spd(matrix: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    let max_diag = matrix.diagonal().amax();
    let chol = Cholesky::new(matrix).ok_or(ModelError::SingularDesign)?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let well_conditioned = min_pivot * min_pivot > 1e-12 * max_diag.max(1e-300);
    if !well_conditioned {
        return Err(ModelError::SingularDesign);
    }
    Ok(chol.solve(rhs))
}

fn gradient_ascent(design: &DMatrix<f64>, y: &[f64], l2: f64) -> Result<BinaryModel, ModelError> {
    const MAX_ITER: usize = 20_000;
    let (n, q) = design.shape();
    let nf = n as f64;
    let mut beta = DVector::<f64>::zeros(q);
    let mut ll = penalized_log_likelihood(design, y, &beta, l2);
    let mut trace = vec![ll];
    let mut lr = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let eta = design * &beta;
        let resid = DVector::from_iterator(n, eta.iter().zip(y).map(|(&e, &yi)| yi - sigmoid(e)));
        let grad = (design.transpose() * resid - &beta * l2) / nf;
        let mut candidate = &beta + &grad * lr;
        let mut cand_ll = penalized_log_likelihood(design, y, &candidate, l2);
        while cand_ll < ll && lr > 1e-12 {
            lr *= 0.5;
            candidate = &beta + &grad * lr;
            cand_ll = penalized_log_likelihood(design, y, &candidate, l2);
        }
        if cand_ll < ll {
            converged = grad.amax() < 1e-6;
            break;
        }
        let max_step = (grad.amax() * lr).abs();
        beta = candidate;
        ll = cand_ll;
        trace.push(ll);
        if l2 == 0.0 && beta.amax() > SEPARATION_BOUND {
            return Err(ModelError::Separation);
        }
        if max_step < STEP_TOL {
            converged = true;
            break;
        }
    }
    Ok(BinaryModel {
        kind: BinaryKind::LogisticGd,
        coefficients: beta.iter().copied().collect(),
        converged,
        iterations,
        log_likelihood_trace: trace,
    })
}

impl BinaryModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// An intercept-only model or one with explicit coefficients.
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        BinaryModel {
            kind: BinaryKind::LogisticIrls,
            coefficients,
            converged: true,
            iterations: 0,
            log_likelihood_trace: Vec::new(),
        }
    }
}

/// Predicted `P(y = 1 | x)`, clamped to `[1e-12, 1 − 1e-12]`.
pub fn predict_binary(model: &BinaryModel, x: &DMatrix<f64>) -> Result<Vec<f64>, ModelError> {
    if x.ncols() != model.n_features() {
        return Err(ModelError::DimensionMismatch {
            expected: model.n_features(),
            found: x.ncols(),
        });
    }
    let beta = &model.coefficients;
    Ok((0..x.nrows())
        .map(|i| {
            let eta = beta[0] + x.row(i).iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            sigmoid(eta).clamp(PROB_EPS, 1.0 - PROB_EPS)
        })
        .collect())
}
