//! Deterministic inputs shared by the benchmarks.

use cferr_core::dataset::AuditDataset;
use cferr_core::models::MulticlassSpec;
use cferr_core::pipeline::PipelineConfig;
use cferr_core::rng::rng_from_seed;
use cferr_core::simlab::{draw_internal, prepare_fixture, ScenarioConfig};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Logistic data with coefficients `(1, 2, -1)` on two standard normal
/// covariates.
pub fn logistic_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<bool>) {
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = (0..n)
        .map(|i| {
            let z = 1.0 + 2.0 * x[(i, 0)] - x[(i, 1)];
            rng.gen_bool(1.0 / (1.0 + (-z).exp()))
        })
        .collect();
    (x, y)
}

/// Two row-stochastic `n × k` membership matrices and labels.
pub fn membership_inputs(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let mut draw = || {
        let mut m = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal).exp());
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        m
    };
    let (h_e, h_i) = (draw(), draw());
    let labels = (0..n).map(|i| (i * 7 + i / 3) % k).collect();
    (h_e, h_i, labels)
}

/// One simulated internal audit sample of `n` rows.
pub fn audit_sample(n: usize, seed: u64) -> AuditDataset {
    let mut cfg = ScenarioConfig::new(n, 1, seed);
    cfg.n_validation = 1_000;
    let fixture = prepare_fixture(&cfg).expect("fixture");
    draw_internal(&cfg, &fixture.risk, 0)
}

/// Pipeline settings with a linear softmax membership model.
pub fn softmax_pipeline() -> PipelineConfig {
    let mut p = PipelineConfig::default();
    p.models.h_internal = MulticlassSpec::softmax(1.0);
    p.models.h_external = MulticlassSpec::softmax(1.0);
    p
}
