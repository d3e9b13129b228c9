//! Data-generating process with both potential outcomes.
//!
//! Two binary protected characteristics give four groups; group position
//! `2·a1 + a2`, so position 0 is `(0,0)` and position 3 is `(1,1)`. Group
//! membership follows a softmax-linear model in the informative covariates
//! with position 0 as the reference class.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{AuditRecord, Characteristic, ExternalRecord, GroupKey, SchemaSpec};
use crate::models::logistic::sigmoid;
use crate::rng::rng_from_seed;

/// Index triples of the interaction terms among the first four covariates:
/// six pairwise products then four three-way products.
pub const INTERACTIONS: [&[usize]; 10] = [
    &[0, 1],
    &[0, 2],
    &[0, 3],
    &[1, 2],
    &[1, 3],
    &[2, 3],
    &[0, 1, 2],
    &[0, 1, 3],
    &[0, 2, 3],
    &[1, 2, 3],
];

pub const N_GROUPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Internal,
    External,
}

/// `intercept + x·slopes + Σ interactions + group effect + s·S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub intercept: f64,
    /// One slope per informative covariate.
    pub slopes: Vec<f64>,
    /// One coefficient per [`INTERACTIONS`] term; used only when the
    /// scenario enables interactions.
    #[serde(default)]
    pub interactions: Vec<f64>,
    /// Effects of group positions 1, 2 and 3 (position 0 is the reference).
    #[serde(default)]
    pub group: Vec<f64>,
    /// Effect of the risk prediction (treatment model only).
    #[serde(default)]
    pub s: f64,
}

impl LinearPredictor {
    fn new(intercept: f64, slopes: &[f64]) -> Self {
        LinearPredictor {
            intercept,
            slopes: slopes.to_vec(),
            interactions: Vec::new(),
            group: Vec::new(),
            s: 0.0,
        }
    }

    fn with_interactions(mut self, coefs: &[f64]) -> Self {
        self.interactions = coefs.to_vec();
        self
    }

    fn eval(&self, x: &[f64], products: Option<&[f64]>, group: usize, s: bool) -> f64 {
        let mut z = self.intercept;
        z += self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        if let Some(products) = products {
            z += self.interactions.iter().zip(products).map(|(b, v)| b * v).sum::<f64>();
        }
        if group > 0 {
            z += self.group.get(group - 1).copied().unwrap_or(0.0);
        }
        if s {
            z += self.s;
        }
        z
    }

    /// Multiplies slopes and interaction coefficients by `b`.
    fn scaled(&self, b: f64) -> Self {
        LinearPredictor {
            slopes: self.slopes.iter().map(|v| v * b).collect(),
            interactions: self.interactions.iter().map(|v| v * b).collect(),
            ..self.clone()
        }
    }

    fn check(&self, name: &str, p: usize) -> Result<(), String> {
        if self.slopes.len() > p {
            return Err(format!(
                "{name}: {} slopes for {p} informative covariates",
                self.slopes.len()
            ));
        }
        if self.interactions.len() > INTERACTIONS.len() {
            return Err(format!("{name}: at most {} interaction terms", INTERACTIONS.len()));
        }
        if self.group.len() > N_GROUPS - 1 {
            return Err(format!("{name}: at most {} group effects", N_GROUPS - 1));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Logit models of group positions 1, 2 and 3 against position 0.
    pub group: Vec<LinearPredictor>,
    pub y0: LinearPredictor,
    pub y1: LinearPredictor,
    pub treatment: LinearPredictor,
}

impl Default for Coefficients {
    fn default() -> Self {
        let outcome_slopes = [1.2, -0.9, 0.8, 0.6, -0.6, 0.5, 0.4, -0.3, 0.3, 0.2];
        let outcome_inter = [0.4, -0.3, 0.2, 0.0, 0.0, 0.2, 0.3, 0.0, -0.2, 0.0];
        let mut treatment = LinearPredictor::new(-1.0, &[0.3, -0.2, 0.2]);
        treatment.s = 1.5;
        treatment.group = vec![0.3, 0.3, 0.6];
        Coefficients {
            group: vec![
                LinearPredictor::new(-1.2, &[0.6, -0.4, 0.3])
                    .with_interactions(&[0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0]),
                LinearPredictor::new(-1.2, &[0.0, 0.6, 0.0, 0.4, -0.3])
                    .with_interactions(&[0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0]),
                LinearPredictor::new(-2.3, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.4])
                    .with_interactions(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.2]),
            ],
            y0: LinearPredictor::new(-2.4, &outcome_slopes).with_interactions(&outcome_inter),
            y1: LinearPredictor::new(-3.4, &outcome_slopes).with_interactions(&outcome_inter),
            treatment,
        }
    }
}

impl Coefficients {
    /// Treatment assigned by a fair coin: `P(D = 1) = 0.5` for everyone.
    pub fn randomized_treatment(mut self) -> Self {
        self.treatment = LinearPredictor::new(0.0, &[]);
        self
    }

    pub fn validate(&self, p_informative: usize) -> Result<(), String> {
        if self.group.len() != N_GROUPS - 1 {
            return Err(format!(
                "expected {} group models, found {}",
                N_GROUPS - 1,
                self.group.len()
            ));
        }
        for (j, g) in self.group.iter().enumerate() {
            g.check(&format!("group[{j}]"), p_informative)?;
        }
        self.y0.check("y0", p_informative)?;
        self.y1.check("y1", p_informative)?;
        self.treatment.check("treatment", p_informative)
    }
}

/// Settings that shape one population draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSettings<'a> {
    pub coefficients: &'a Coefficients,
    pub p_informative: usize,
    pub p_noise: usize,
    pub interactions: bool,
    /// Multiplier applied to the group-model slopes for external draws.
    pub b: f64,
}

impl DgpSettings<'_> {
    pub fn n_covariates(&self) -> usize {
        self.p_informative + self.p_noise
    }
}

/// One simulated individual. `y` satisfies `y = d·y1 + (1 − d)·y0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialRecord {
    pub group: GroupKey,
    pub x: Vec<f64>,
    pub y0: bool,
    pub y1: bool,
    pub d: bool,
    pub y: bool,
    pub s: bool,
}

pub fn position_key(position: usize) -> GroupKey {
    GroupKey::new(vec![(position / 2) as u16, (position % 2) as u16])
}

pub fn key_position(key: &GroupKey) -> usize {
    let l = key.levels();
    2 * l[0] as usize + l[1] as usize
}

fn interaction_terms(x: &[f64]) -> Vec<f64> {
    INTERACTIONS
        .iter()
        .map(|idx| idx.iter().map(|&j| x[j]).product())
        .collect()
}

/// Schema of simulated data: characteristics `a1`, `a2` with levels `0`/`1`,
/// covariates `x1..xp`, all shared with external data.
pub fn simulation_schema(n_covariates: usize) -> Arc<SchemaSpec> {
    let binary = |name: &str| Characteristic {
        name: name.into(),
        levels: vec!["0".into(), "1".into()],
    };
    Arc::new(SchemaSpec {
        characteristics: vec![binary("a1"), binary("a2")],
        treatment: "d".into(),
        outcome: "y".into(),
        prediction: "s".into(),
        covariates: (1..=n_covariates).map(|j| format!("x{j}")).collect(),
        external_covariates: None,
    })
}

fn draw_treatment<R: Rng>(rng: &mut R, settings: &DgpSettings, rec: &mut PotentialRecord) {
    let p_inf = settings.p_informative;
    let products = settings.interactions.then(|| interaction_terms(&rec.x));
    let z = settings
        .coefficients
        .treatment
        .eval(&rec.x[..p_inf], products.as_deref(), key_position(&rec.group), rec.s);
    rec.d = rng.gen_bool(sigmoid(z));
    rec.y = if rec.d { rec.y1 } else { rec.y0 };
}

/// Draws `n` individuals. Treatment is drawn with `S = 0`; call
/// [`assign_predictions`] once the risk model exists. For
/// [`Role::External`] the group model's slopes and interactions are scaled
/// by `settings.b` (intercepts are kept) and only `x` and `group` matter.
pub fn generate_population(settings: &DgpSettings, role: Role, n: usize, seed: u64) -> Vec<PotentialRecord> {
    let mut rng = rng_from_seed(seed);
    let coefs = settings.coefficients;
    let group_models: Vec<LinearPredictor> = match role {
        Role::External => coefs.group.iter().map(|g| g.scaled(settings.b)).collect(),
        _ => coefs.group.clone(),
    };
    let p = settings.n_covariates();
    let p_inf = settings.p_informative;
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let products = settings.interactions.then(|| interaction_terms(&x));
            let xi = &x[..p_inf];
            let mut logits = [0.0; N_GROUPS];
            for (k, g) in group_models.iter().enumerate() {
                logits[k + 1] = g.eval(xi, products.as_deref(), 0, false);
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let u: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut position = N_GROUPS - 1;
            for (k, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    position = k;
                    break;
                }
            }
            let y0 = rng.gen_bool(sigmoid(coefs.y0.eval(xi, products.as_deref(), position, false)));
            let y1 = rng.gen_bool(sigmoid(coefs.y1.eval(xi, products.as_deref(), position, false)));
            let mut rec = PotentialRecord {
                group: position_key(position),
                x,
                y0,
                y1,
                d: false,
                y: y0,
                s: false,
            };
            draw_treatment(&mut rng, settings, &mut rec);
            rec
        })
        .collect()
}

/// Sets `S` from `predict` and redraws treatment (which depends on `S`).
pub fn assign_predictions(
    settings: &DgpSettings,
    records: &mut [PotentialRecord],
    predict: impl Fn(&[f64]) -> bool,
    seed: u64,
) {
    let mut rng = rng_from_seed(seed);
    for rec in records.iter_mut() {
        rec.s = predict(&rec.x);
        draw_treatment(&mut rng, settings, rec);
    }
}

pub fn to_audit_records(records: &[PotentialRecord]) -> Vec<AuditRecord> {
    records
        .iter()
        .map(|r| AuditRecord {
            group: r.group.clone(),
            d: r.d,
            y: r.y,
            s: r.s,
            x: r.x.clone(),
        })
        .collect()
}

pub fn to_external_records(records: &[PotentialRecord]) -> Vec<ExternalRecord> {
    records
        .iter()
        .map(|r| ExternalRecord {
            group: r.group.clone(),
            x: r.x.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(c: &Coefficients) -> DgpSettings<'_> {
        DgpSettings {
            coefficients: c,
            p_informative: 10,
            p_noise: 2,
            interactions: false,
            b: 1.0,
        }
    }

    fn shares(records: &[PotentialRecord]) -> [f64; 4] {
        let mut c = [0.0; 4];
        for r in records {
            c[key_position(&r.group)] += 1.0;
        }
        c.map(|v| v / records.len() as f64)
    }

    #[test]
    fn majority_and_minority_positions() {
        let c = Coefficients::default();
        for interactions in [false, true] {
            let s = DgpSettings {
                interactions,
                ..settings(&c)
            };
            let pop = generate_population(&s, Role::Validation, 50_000, 1);
            let sh = shares(&pop);
            assert!(sh[0] > sh[1] && sh[0] > sh[2] && sh[0] > 0.45, "{sh:?}");
            assert!(sh[3] < sh[1] && sh[3] < sh[2] && sh[3] > 0.04, "{sh:?}");
        }
    }

    #[test]
    fn consistency_equation_and_determinism() {
        let c = Coefficients::default();
        let s = settings(&c);
        let a = generate_population(&s, Role::Internal, 500, 9);
        let b = generate_population(&s, Role::Internal, 500, 9);
        assert_eq!(a, b);
        for r in &a {
            assert_eq!(r.y, if r.d { r.y1 } else { r.y0 });
            assert_eq!(r.x.len(), 12);
        }
    }

    #[test]
    fn unit_multiplier_keeps_group_model() {
        let c = Coefficients::default();
        let s = settings(&c);
        // Same seed: external and internal draws share X and the group draw.
        let int = generate_population(&s, Role::Internal, 2000, 4);
        let ext = generate_population(&s, Role::External, 2000, 4);
        assert!(int.iter().zip(&ext).all(|(a, b)| a.group == b.group && a.x == b.x));
        // b = −1 flips the slopes, which moves group frequencies given X.
        let flipped = DgpSettings { b: -1.0, ..s.clone() };
        let ext = generate_population(&flipped, Role::External, 2000, 4);
        assert!(int.iter().zip(&ext).any(|(a, b)| a.group != b.group));
    }

    #[test]
    fn randomized_treatment_is_a_coin() {
        let c = Coefficients::default().randomized_treatment();
        let pop = generate_population(&settings(&c), Role::Internal, 20_000, 2);
        let rate = pop.iter().filter(|r| r.d).count() as f64 / pop.len() as f64;
        assert!((rate - 0.5).abs() < 0.015);
    }

    #[test]
    fn predictions_shift_treatment() {
        let c = Coefficients::default();
        let s = settings(&c);
        let mut pop = generate_population(&s, Role::Internal, 20_000, 3);
        assign_predictions(&s, &mut pop, |x| x[0] > 0.0, 5);
        let rate = |flag: bool| {
            let sel: Vec<_> = pop.iter().filter(|r| r.s == flag).collect();
            sel.iter().filter(|r| r.d).count() as f64 / sel.len() as f64
        };
        assert!(rate(true) > rate(false) + 0.2);
        assert!(pop.iter().all(|r| r.y == if r.d { r.y1 } else { r.y0 }));
    }

    #[test]
    fn validation_of_shapes() {
        let c = Coefficients::default();
        assert!(c.validate(10).is_ok());
        assert!(c.validate(4).is_err());
        let mut bad = c.clone();
        bad.group.pop();
        assert!(bad.validate(10).is_err());
    }
}
