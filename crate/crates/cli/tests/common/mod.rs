//! Shared helpers for the command-line tests: simulated input files and a
//! wrapper around the built binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cferr_core::simlab::{
    draw_internal, generate_population, prepare_fixture, Coefficients, DgpSettings, Role, ScenarioConfig,
};

pub struct AuditInputs {
    pub schema: PathBuf,
    pub internal: PathBuf,
    pub external: PathBuf,
}

/// Writes a schema, an internal sample of `n` rows, and an external sample
/// of `n_external` rows drawn from the simulation laboratory.
pub fn write_audit_inputs(dir: &Path, n: usize, n_external: usize, seed: u64) -> AuditInputs {
    let mut cfg = ScenarioConfig::new(n, 1, seed);
    cfg.n_validation = 1_000;
    cfg.n_train = 500;
    let fixture = prepare_fixture(&cfg).expect("fixture");
    let ds = draw_internal(&cfg, &fixture.risk, 0);
    let schema = cfg.schema();

    let paths = AuditInputs {
        schema: dir.join("schema.json"),
        internal: dir.join("internal.csv"),
        external: dir.join("external.csv"),
    };
    std::fs::write(&paths.schema, serde_json::to_string_pretty(&*schema).unwrap()).unwrap();
    ds.write_csv(std::fs::File::create(&paths.internal).unwrap()).unwrap();

    let coefs = Coefficients::default();
    let settings = DgpSettings {
        coefficients: &coefs,
        p_informative: cfg.p_informative,
        p_noise: 0,
        interactions: false,
        b: 1.0,
    };
    let ext = generate_population(&settings, Role::External, n_external, seed ^ 0xE);
    let mut w = csv::Writer::from_path(&paths.external).unwrap();
    let mut header = vec!["a1".to_string(), "a2".to_string()];
    header.extend(schema.covariates.iter().cloned());
    w.write_record(&header).unwrap();
    for r in &ext {
        let mut row: Vec<String> = r.group.levels().iter().map(|l| l.to_string()).collect();
        row.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
    paths
}

/// A fast membership model for tests.
pub fn softmax_pipeline() -> serde_json::Value {
    serde_json::json!({
        "models": {
            "h_internal": { "kind": "softmax-linear", "decay": 1.0 },
            "h_external": { "kind": "softmax-linear", "decay": 1.0 }
        }
    })
}

pub fn write_json(path: &Path, value: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

pub fn cferr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cferr"))
        .args(args)
        .output()
        .expect("run cferr")
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

pub fn read_json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}

pub fn csv_rows(path: impl AsRef<Path>) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path.as_ref()).unwrap();
    r.records().map(|r| r.unwrap()).collect()
}
