//! Simulation laboratory: populations with known potential outcomes, an
//! audited risk model, ground truth by counting, and replication sweeps.

pub mod dgp;
pub mod forest;
pub mod oracle;
pub mod scenario;

pub use dgp::{
    assign_predictions, generate_population, simulation_schema, Coefficients, DgpSettings, LinearPredictor,
    PotentialRecord, Role,
};
pub use forest::{train_risk_model, ForestConfig, ForestError, RiskModel};
pub use oracle::{oracle_error_rates, OracleCounts, OracleTruth};
pub use scenario::{
    draw_internal, prepare_fixture, run_scenario, write_aggregate_csv, write_replications_csv, AggregateRow,
    ReplicationResult, ScenarioConfig, ScenarioResult, SimulationConfig, SimulationError, Summary, Sweep,
};
