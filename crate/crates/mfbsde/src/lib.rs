//! Scenario configuration, solver dispatch, CSV export and the acceptance suite
//! on top of `mfbsde-core`.

pub mod config;
pub mod error;
pub mod report;
pub mod scenario;
pub mod suite;

pub use config::ScenarioConfig;
pub use error::HarnessError;
pub use report::{export_csv, parse_csv, SolverReport};
pub use scenario::{run_scenario, solve};
pub use suite::{run_suite, SuiteSummary};
