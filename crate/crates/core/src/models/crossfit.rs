//! Out-of-fold prediction of the propensity score and the untreated
//! outcome regressions.
//!
//! With `k = 1` every model is fit once on the full sample. With `k ≥ 2`
//! each row is predicted by models trained on the other folds only.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::logistic::{fit_with_spec, predict_binary, BinaryModelSpec};
use super::ModelError;
use crate::dataset::AuditDataset;
use crate::rng::rng_from_seed;

const MAX_FOLD_DRAWS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelSpecs {
    #[serde(default)]
    pub pi: BinaryModelSpec,
    #[serde(default)]
    pub mu0: BinaryModelSpec,
    #[serde(default)]
    pub mu0_star: BinaryModelSpec,
}

/// Per-row predictions of `π̂ = P(D=1|A,X,S)`, `μ̂₀(1,s,X) = P(Y=1|D=0,S=s,X)`
/// and `μ̂₀*(1,X) = P(Y=1|D=0,X)`. A model whose training stratum is empty
/// predicts `NaN`, which downstream estimators report as undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeNuisances {
    pub pi_hat: Vec<f64>,
    pub mu0_s1: Vec<f64>,
    pub mu0_s0: Vec<f64>,
    pub mu0_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossFitPlan {
    pub k: usize,
    pub folds: Vec<usize>,
    pub seed: u64,
}

impl CrossFitPlan {
    /// Random balanced assignment of `n` rows to `k` folds.
    pub fn random(n: usize, k: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from_seed(seed));
        let mut folds = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            folds[row] = pos % k;
        }
        CrossFitPlan { k, folds, seed }
    }

    /// Draws a plan whose every training complement contains both treatment
    /// classes and both outcome classes among untreated rows.
    pub fn draw(ds: &AuditDataset, k: usize, seed: u64) -> Result<Self, ModelError> {
        if k < 2 || k > ds.len() {
            return Err(ModelError::InvalidParameter(format!("{k} folds for {} rows", ds.len())));
        }
        for attempt in 0..MAX_FOLD_DRAWS {
            let plan = CrossFitPlan::random(ds.len(), k, crate::rng::derive_seed(seed, attempt as u64));
            if plan.is_feasible(ds) {
                return Ok(plan);
            }
        }
        Err(ModelError::InfeasibleFolds {
            attempts: MAX_FOLD_DRAWS,
        })
    }

    fn is_feasible(&self, ds: &AuditDataset) -> bool {
        (0..self.k).all(|f| {
            let mut seen = [false; 4];
            for (r, &fold) in ds.records().iter().zip(&self.folds) {
                if fold != f {
                    seen[usize::from(r.d)] = true;
                    if !r.d {
                        seen[2 + usize::from(r.y)] = true;
                    }
                }
            }
            seen.iter().all(|&s| s)
        })
    }

    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }
}

/// Propensity design: one indicator per non-reference level of each
/// protected characteristic, then the covariates, then `S`.
pub fn propensity_design(ds: &AuditDataset) -> DMatrix<f64> {
    let schema = ds.schema();
    let dummies: usize = schema.characteristics.iter().map(|c| c.levels.len() - 1).sum();
    let p = schema.n_covariates();
    DMatrix::from_fn(ds.len(), dummies + p + 1, |i, j| {
        let r = &ds.records()[i];
        if j < dummies {
            let mut offset = 0;
            for (c, &level) in schema.characteristics.iter().zip(r.group.levels()) {
                let width = c.levels.len() - 1;
                if j < offset + width {
                    return f64::from(u8::from(level as usize == j - offset + 1));
                }
                offset += width;
            }
            unreachable!()
        } else if j < dummies + p {
            r.x[j - dummies]
        } else {
            f64::from(u8::from(r.s))
        }
    })
}

struct Designs {
    pi: DMatrix<f64>,
    x: DMatrix<f64>,
}

fn fit_predict(
    design: &DMatrix<f64>,
    train: &[usize],
    labels: impl Fn(usize) -> bool,
    spec: &BinaryModelSpec,
    targets: &[usize],
) -> Result<Vec<f64>, ModelError> {
    if train.is_empty() {
        return Ok(vec![f64::NAN; targets.len()]);
    }
    let y: Vec<bool> = train.iter().map(|&i| labels(i)).collect();
    let model = fit_with_spec(&design.select_rows(train), &y, spec)?;
    predict_binary(&model, &design.select_rows(targets))
}

/// Fits the three outcome-side models on `train` and predicts `targets`.
fn fit_fold(
    ds: &AuditDataset,
    designs: &Designs,
    specs: &OutcomeModelSpecs,
    train: &[usize],
    targets: &[usize],
) -> Result<OutcomeNuisances, ModelError> {
    let recs = ds.records();
    let untreated: Vec<usize> = train.iter().copied().filter(|&i| !recs[i].d).collect();
    let stratum = |s: bool| -> Vec<usize> { untreated.iter().copied().filter(|&i| recs[i].s == s).collect() };
    let outcome = |i: usize| recs[i].y;
    Ok(OutcomeNuisances {
        pi_hat: fit_predict(&designs.pi, train, |i| recs[i].d, &specs.pi, targets)?,
        mu0_s1: fit_predict(&designs.x, &stratum(true), outcome, &specs.mu0, targets)?,
        mu0_s0: fit_predict(&designs.x, &stratum(false), outcome, &specs.mu0, targets)?,
        mu0_star: fit_predict(&designs.x, &untreated, outcome, &specs.mu0_star, targets)?,
    })
}

pub fn cross_fit(
    ds: &AuditDataset,
    specs: &OutcomeModelSpecs,
    k: usize,
    seed: u64,
) -> Result<OutcomeNuisances, ModelError> {
    let designs = Designs {
        pi: propensity_design(ds),
        x: ds.covariates(),
    };
    let all: Vec<usize> = (0..ds.len()).collect();
    if k <= 1 {
        return fit_fold(ds, &designs, specs, &all, &all);
    }
    let plan = CrossFitPlan::draw(ds, k, seed)?;
    cross_fit_with_plan(ds, &designs, specs, &plan)
}

fn cross_fit_with_plan(
    ds: &AuditDataset,
    designs: &Designs,
    specs: &OutcomeModelSpecs,
    plan: &CrossFitPlan,
) -> Result<OutcomeNuisances, ModelError> {
    let n = ds.len();
    let mut out = OutcomeNuisances {
        pi_hat: vec![f64::NAN; n],
        mu0_s1: vec![f64::NAN; n],
        mu0_s0: vec![f64::NAN; n],
        mu0_star: vec![f64::NAN; n],
    };
    for fold in 0..plan.k {
        let held_out = plan.fold_rows(fold);
        let train: Vec<usize> = (0..n).filter(|&i| plan.folds[i] != fold).collect();
        let part = fit_fold(ds, designs, specs, &train, &held_out)?;
        for (j, &row) in held_out.iter().enumerate() {
            out.pi_hat[row] = part.pi_hat[j];
            out.mu0_s1[row] = part.mu0_s1[j];
            out.mu0_s0[row] = part.mu0_s0[j];
            out.mu0_star[row] = part.mu0_star[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AuditRecord, Characteristic, GroupKey, SchemaSpec};
    use crate::models::logistic::fit_with_spec;
    use rand::Rng;
    use std::sync::Arc;

    fn schema(p: usize) -> Arc<SchemaSpec> {
        Arc::new(SchemaSpec {
            characteristics: vec![Characteristic {
                name: "a".into(),
                levels: vec!["u".into(), "v".into(), "w".into()],
            }],
            treatment: "d".into(),
            outcome: "y".into(),
            prediction: "s".into(),
            covariates: (0..p).map(|j| format!("x{j}")).collect(),
            external_covariates: None,
        })
    }

    fn random_dataset(n: usize, seed: u64) -> AuditDataset {
        let mut rng = rng_from_seed(seed);
        let records = (0..n)
            .map(|_| {
                let x1: f64 = rng.gen_range(-2.0..2.0);
                AuditRecord {
                    group: GroupKey::new(vec![rng.gen_range(0..3)]),
                    d: rng.gen_bool(0.4),
                    y: rng.gen_bool(0.5 + 0.2 * x1.tanh()),
                    s: rng.gen_bool(0.3),
                    x: vec![x1, rng.gen_range(-1.0..1.0)],
                }
            })
            .collect();
        AuditDataset::new(schema(2), records).unwrap()
    }

    #[test]
    fn balanced_folds() {
        let plan = CrossFitPlan::random(1000, 10, 3);
        for f in 0..10 {
            assert_eq!(plan.fold_rows(f).len(), 100);
        }
        let plan = CrossFitPlan::random(23, 4, 3);
        let sizes: Vec<usize> = (0..4).map(|f| plan.fold_rows(f).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn propensity_design_layout() {
        let ds = random_dataset(5, 1);
        let m = propensity_design(&ds);
        assert_eq!(m.ncols(), 2 + 2 + 1);
        for (i, r) in ds.records().iter().enumerate() {
            let level = r.group.levels()[0];
            assert_eq!(m[(i, 0)], f64::from(u8::from(level == 1)));
            assert_eq!(m[(i, 1)], f64::from(u8::from(level == 2)));
            assert_eq!(m[(i, 2)], r.x[0]);
            assert_eq!(m[(i, 4)], f64::from(u8::from(r.s)));
        }
    }

    #[test]
    fn single_fold_equals_full_fit() {
        let ds = random_dataset(300, 2);
        let specs = OutcomeModelSpecs::default();
        let nuis = cross_fit(&ds, &specs, 1, 0).unwrap();
        let x = ds.covariates();
        let untreated: Vec<usize> = (0..ds.len()).filter(|&i| !ds.records()[i].d).collect();
        let y: Vec<bool> = untreated.iter().map(|&i| ds.records()[i].y).collect();
        let m = fit_with_spec(&x.select_rows(&untreated), &y, &specs.mu0_star).unwrap();
        assert_eq!(nuis.mu0_star, predict_binary(&m, &x).unwrap());
        let d: Vec<bool> = ds.records().iter().map(|r| r.d).collect();
        let m = fit_with_spec(&propensity_design(&ds), &d, &specs.pi).unwrap();
        assert_eq!(nuis.pi_hat, predict_binary(&m, &propensity_design(&ds)).unwrap());
    }

    #[test]
    fn held_out_rows_ignore_their_own_labels() {
        let ds = random_dataset(1000, 4);
        let specs = OutcomeModelSpecs::default();
        let base = cross_fit(&ds, &specs, 10, 9).unwrap();
        for row in [0, 17, 503] {
            let mut records = ds.records().to_vec();
            records[row].y = !records[row].y;
            records[row].d = !records[row].d;
            let perturbed = AuditDataset::new(ds.shared_schema(), records).unwrap();
            let again = cross_fit(&perturbed, &specs, 10, 9).unwrap();
            assert_eq!(base.pi_hat[row], again.pi_hat[row]);
            assert_eq!(base.mu0_star[row], again.mu0_star[row]);
            assert_eq!(base.mu0_s0[row], again.mu0_s0[row]);
            assert_eq!(base.mu0_s1[row], again.mu0_s1[row]);
        }
    }

    #[test]
    fn two_folds_hand_traced() {
        // 10 rows, one covariate; labels chosen so each half has both classes.
        let rows: [(bool, bool, bool, f64); 10] = [
            (false, true, false, 0.5),
            (false, false, true, -0.3),
            (true, true, false, 1.2),
            (false, true, true, 0.9),
            (false, false, false, -1.1),
            (true, false, true, 0.1),
            (false, true, false, 0.4),
            (false, false, true, -0.7),
            (true, true, true, 1.5),
            (false, false, false, -0.2),
        ];
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, &(d, y, s, x))| AuditRecord {
                group: GroupKey::new(vec![(i % 3) as u16]),
                d,
                y,
                s,
                x: vec![x, 0.0],
            })
            .collect();
        let ds = AuditDataset::new(schema(2), records).unwrap();
        let specs = OutcomeModelSpecs::default();
        let plan = CrossFitPlan::draw(&ds, 2, 5).unwrap();
        let designs = Designs {
            pi: propensity_design(&ds),
            x: ds.covariates(),
        };
        let nuis = cross_fit_with_plan(&ds, &designs, &specs, &plan).unwrap();
        assert_eq!(nuis, cross_fit(&ds, &specs, 2, 5).unwrap());

        let fold_a = plan.fold_rows(0);
        let fold_b = plan.fold_rows(1);
        let untreated_b: Vec<usize> = fold_b.iter().copied().filter(|&i| !rows[i].0).collect();
        let y: Vec<bool> = untreated_b.iter().map(|&i| rows[i].1).collect();
        let m = fit_with_spec(&designs.x.select_rows(&untreated_b), &y, &specs.mu0_star).unwrap();
        let expected = predict_binary(&m, &designs.x.select_rows(&fold_a)).unwrap();
        for (j, &row) in fold_a.iter().enumerate() {
            assert_eq!(nuis.mu0_star[row], expected[j]);
        }
    }

    #[test]
    fn infeasible_when_outcome_constant() {
        let mut ds = random_dataset(50, 6);
        let records: Vec<AuditRecord> = ds
            .records()
            .iter()
            .cloned()
            .map(|mut r| {
                r.d = false;
                r
            })
            .collect();
        ds = AuditDataset::new(ds.shared_schema(), records).unwrap();
        assert!(matches!(
            cross_fit(&ds, &OutcomeModelSpecs::default(), 5, 0),
            Err(ModelError::InfeasibleFolds { .. })
        ));
    }

    #[test]
    fn reproducible() {
        let ds = random_dataset(400, 7);
        let a = cross_fit(&ds, &OutcomeModelSpecs::default(), 10, 1).unwrap();
        let b = cross_fit(&ds, &OutcomeModelSpecs::default(), 10, 1).unwrap();
        assert_eq!(a, b);
    }
}
