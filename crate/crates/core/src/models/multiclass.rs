//! Multiclass group-membership models `P(A = a | X = x)`.
//!
//! Two architectures share one training loop: a linear softmax and a
//! single-hidden-layer network with logistic hidden units. Both minimize
//! `Σᵢ −log pᵢ,yᵢ + decay·Σ w²` (biases unpenalized) by full-batch gradient
//! descent with heavy-ball momentum and a fixed learning rate, applied to the
//! objective divided by `n`. Inputs are standardized internally.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::ModelError;
use crate::rng::rng_from_seed;

const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MulticlassKind {
    #[serde(rename = "softmax-linear")]
    SoftmaxLinear,
    #[serde(rename = "mlp-1hidden")]
    Mlp1Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSpec {
    pub kind: MulticlassKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Defaults to 0.5 for the linear softmax and `2 / (4 + hidden)` for the network.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    /// Initialization seed; derived from the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_hidden() -> usize {
    100
}
fn default_decay() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    500
}

impl MulticlassSpec {
    pub fn mlp(hidden: usize, decay: f64) -> Self {
        MulticlassSpec {
            kind: MulticlassKind::Mlp1Hidden,
            hidden,
            decay,
            epochs: default_epochs(),
            learning_rate: None,
            seed: None,
        }
    }

    pub fn softmax(decay: f64) -> Self {
        MulticlassSpec {
            kind: MulticlassKind::SoftmaxLinear,
            decay,
            ..Self::mlp(default_hidden(), decay)
        }
    }

    fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.kind {
            MulticlassKind::SoftmaxLinear => 0.5,
            MulticlassKind::Mlp1Hidden => 2.0 / (4.0 + self.hidden as f64),
        })
    }
}

impl Default for MulticlassSpec {
    fn default() -> Self {
        MulticlassSpec::mlp(default_hidden(), default_decay())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Softmax {
        w: DMatrix<f64>,
        b: DVector<f64>,
    },
    Mlp {
        w1: DMatrix<f64>,
        b1: DVector<f64>,
        w2: DMatrix<f64>,
        b2: DVector<f64>,
    },
}

impl Params {
    fn blocks(&self) -> Vec<&[f64]> {
        match self {
            Params::Softmax { w, b } => vec![w.as_slice(), b.as_slice()],
            Params::Mlp { w1, b1, w2, b2 } => vec![w1.as_slice(), b1.as_slice(), w2.as_slice(), b2.as_slice()],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Params::Softmax { w, b } => vec![w.as_mut_slice(), b.as_mut_slice()],
            Params::Mlp { w1, b1, w2, b2 } => vec![
                w1.as_mut_slice(),
                b1.as_mut_slice(),
                w2.as_mut_slice(),
                b2.as_mut_slice(),
            ],
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    fn load(&mut self, theta: &[f64]) {
        let mut offset = 0;
        for block in self.blocks_mut() {
            block.copy_from_slice(&theta[offset..offset + block.len()]);
            offset += block.len();
        }
    }

    fn axpy(&mut self, step: f64, other: &Params) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += step * s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn penalty(&self) -> f64 {
        match self {
            Params::Softmax { w, .. } => w.norm_squared(),
            Params::Mlp { w1, w2, .. } => w1.norm_squared() + w2.norm_squared(),
        }
    }

    fn zeros(kind: MulticlassKind, p: usize, hidden: usize, k: usize) -> Params {
        match kind {
            MulticlassKind::SoftmaxLinear => Params::Softmax {
                w: DMatrix::zeros(k, p),
                b: DVector::zeros(k),
            },
            MulticlassKind::Mlp1Hidden => Params::Mlp {
                w1: DMatrix::zeros(hidden, p),
                b1: DVector::zeros(hidden),
                w2: DMatrix::zeros(k, hidden),
                b2: DVector::zeros(k),
            },
        }
    }

    /// Zero linear weights; symmetric uniform (Xavier) network weights.
    fn init(kind: MulticlassKind, p: usize, hidden: usize, k: usize, seed: u64) -> Params {
        let mut params = Params::zeros(kind, p, hidden, k);
        if let Params::Mlp { w1, w2, .. } = &mut params {
            let mut rng = rng_from_seed(seed);
            let r1 = (6.0 / (p + hidden) as f64).sqrt();
            let r2 = (6.0 / (hidden + k) as f64).sqrt();
            w1.iter_mut().for_each(|v| *v = rng.gen_range(-r1..r1));
            w2.iter_mut().for_each(|v| *v = rng.gen_range(-r2..r2));
        }
        params
    }

    /// Row-stochastic class probabilities and, for the network, hidden activations.
    fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        match self {
            Params::Softmax { w, b } => {
                let mut z = x * w.transpose();
                add_row_bias(&mut z, b);
                softmax_rows(&mut z);
                (z, None)
            }
            Params::Mlp { w1, b1, w2, b2 } => {
                let mut a = x * w1.transpose();
                add_row_bias(&mut a, b1);
                a.iter_mut().for_each(|v| *v = sigmoid(*v));
                let mut z = &a * w2.transpose();
                add_row_bias(&mut z, b2);
                softmax_rows(&mut z);
                (z, Some(a))
            }
        }
    }

    /// Objective `(Σ CE + decay·Σw²)/n` and its gradient.
    fn loss_and_gradient(&self, x: &DMatrix<f64>, labels: &[usize], decay: f64) -> (f64, Params) {
        let n = x.nrows() as f64;
        let (probs, hidden) = self.forward(x);
        let mut ce = 0.0;
        let mut delta = probs;
        for (i, &label) in labels.iter().enumerate() {
            ce -= delta[(i, label)].max(1e-300).ln();
            delta[(i, label)] -= 1.0;
        }
        delta /= n;
        let value = (ce + decay * self.penalty()) / n;
        let shrink = 2.0 * decay / n;
        let grad = match (self, hidden) {
            (Params::Softmax { w, .. }, _) => Params::Softmax {
                w: delta.transpose() * x + w * shrink,
                b: column_sums(&delta),
            },
            (Params::Mlp { w1, w2, .. }, Some(h)) => {
                let gw2 = delta.transpose() * &h + w2 * shrink;
                let gb2 = column_sums(&delta);
                let mut dh = &delta * w2;
                dh.zip_apply(&h, |d, a| *d *= a * (1.0 - a));
                let gw1 = dh.transpose() * x + w1 * shrink;
                let gb1 = column_sums(&dh);
                Params::Mlp {
                    w1: gw1,
                    b1: gb1,
                    w2: gw2,
                    b2: gb2,
                }
            }
            (Params::Mlp { .. }, None) => unreachable!("network forward returns activations"),
        };
        (value, grad)
    }
}

fn add_row_bias(m: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(bias[j]);
    }
}

fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row /= total;
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// The training objective as a function of a flat parameter vector, for
/// gradient checking and external optimizers. Inputs are used as given
/// (no standardization).
pub struct MulticlassObjective<'a> {
    template: Params,
    x: &'a DMatrix<f64>,
    labels: &'a [usize],
    decay: f64,
}

impl<'a> MulticlassObjective<'a> {
    pub fn new(
        kind: MulticlassKind,
        hidden: usize,
        decay: f64,
        n_classes: usize,
        x: &'a DMatrix<f64>,
        labels: &'a [usize],
    ) -> Self {
        MulticlassObjective {
            template: Params::zeros(kind, x.ncols(), hidden, n_classes),
            x,
            labels,
            decay,
        }
    }

    pub fn n_params(&self) -> usize {
        self.template.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.value_and_gradient(theta).0
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut params = self.template.clone();
        params.load(theta);
        let (v, g) = params.loss_and_gradient(self.x, self.labels, self.decay);
        (v, g.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Constant(usize),
    Trained {
        params: Params,
        mean: Vec<f64>,
        scale: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel {
    pub kind: Option<MulticlassKind>,
    pub n_classes: usize,
    pub n_features: usize,
    fitted: Fitted,
}

impl MulticlassModel {
    /// All probability on one class; the fallback for single-class labels.
    pub fn constant(class: usize, n_classes: usize, n_features: usize) -> Self {
        MulticlassModel {
            kind: None,
            n_classes,
            n_features,
            fitted: Fitted::Constant(class),
        }
    }

    /// Softmax model with explicit weights (`k × p`) and biases; inputs are
    /// not rescaled.
    pub fn softmax_from_weights(w: DMatrix<f64>, b: DVector<f64>) -> Self {
        let (k, p) = w.shape();
        MulticlassModel {
            kind: Some(MulticlassKind::SoftmaxLinear),
            n_classes: k,
            n_features: p,
            fitted: Fitted::Trained {
                params: Params::Softmax { w, b },
                mean: vec![0.0; p],
                scale: vec![1.0; p],
            },
        }
    }

    /// Flat parameter vector in [`MulticlassObjective`] layout; empty for a
    /// constant model.
    pub fn parameters(&self) -> Vec<f64> {
        match &self.fitted {
            Fitted::Constant(_) => Vec::new(),
            Fitted::Trained { params, .. } => params.to_vec(),
        }
    }
}

fn standardize(x: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    let mut z = x.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
        col /= scale[j];
    }
    z
}

/// Fits a group-membership model. `labels[i]` is a class index below
/// `n_classes`; classes never observed still receive (small) probability.
pub fn fit_multiclass(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    spec: &MulticlassSpec,
    seed: u64,
) -> Result<MulticlassModel, ModelError> {
    let (n, p) = x.shape();
    if n != labels.len() {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(ModelError::InvalidParameter(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut seen = vec![false; n_classes];
    labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(ModelError::DegenerateLabels);
    }
    if n < n_classes {
        return Err(ModelError::InsufficientRows {
            rows: n,
            needed: n_classes,
        });
    }
    if spec.kind == MulticlassKind::Mlp1Hidden && spec.hidden == 0 {
        return Err(ModelError::InvalidParameter("hidden width must be positive".into()));
    }
    if !(spec.decay >= 0.0 && spec.decay.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("decay = {}", spec.decay)));
    }

    let nf = n as f64;
    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / nf).collect();
    let scale: Vec<f64> = x
        .column_iter()
        .zip(&mean)
        .map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let z = standardize(x, &mean, &scale);

    let mut params = Params::init(spec.kind, p, spec.hidden, n_classes, seed);
    let lr = spec.learning_rate();
    let mut velocity = Params::zeros(spec.kind, p, spec.hidden, n_classes);
    for _ in 0..spec.epochs {
        let (_, grad) = params.loss_and_gradient(&z, labels, spec.decay);
        velocity.scale(MOMENTUM);
        velocity.axpy(-lr, &grad);
        params.axpy(1.0, &velocity);
    }

    Ok(MulticlassModel {
        kind: Some(spec.kind),
        n_classes,
        n_features: p,
        fitted: Fitted::Trained { params, mean, scale },
    })
}

/// `n × K` matrix of class probabilities; every row sums to one.
pub fn predict_multiclass(model: &MulticlassModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    if x.ncols() != model.n_features {
        return Err(ModelError::DimensionMismatch {
            expected: model.n_features,
            found: x.ncols(),
        });
    }
    Ok(match &model.fitted {
        Fitted::Constant(class) => {
            let mut m = DMatrix::zeros(x.nrows(), model.n_classes);
            m.column_mut(*class).fill(1.0);
            m
        }
        Fitted::Trained { params, mean, scale } => params.forward(&standardize(x, mean, scale)).0,
    })
}
