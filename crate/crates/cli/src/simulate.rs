//! The `simulate` command: runs every scenario of a sweep and writes
//! per-replication and aggregate tables.

use cferr_core::simlab::{run_scenario, write_aggregate_csv, write_replications_csv};

use crate::config::Resolved;
use crate::manifest::Manifest;
use crate::Failure;

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let Some(sim) = &resolved.config.scenario else {
        return Err(Failure::Config("simulate mode needs `scenario`".into()));
    };
    let results = sim
        .scenarios()
        .iter()
        .map(run_scenario)
        .collect::<Result<Vec<_>, _>>()?;

    let mut manifest = Manifest::new(resolved.mode, &resolved.config)?;
    let mut replications = Vec::new();
    write_replications_csv(&results, &mut replications)?;
    manifest.write_output(&resolved.out, "replications.csv", &replications)?;
    let mut aggregate = Vec::new();
    write_aggregate_csv(&results, &mut aggregate)?;
    manifest.write_output(&resolved.out, "aggregate.csv", &aggregate)?;
    manifest.finish(&resolved.out)
}
