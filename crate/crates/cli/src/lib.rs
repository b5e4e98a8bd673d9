//! Scenario-driven front end for the microgrid risk toolkit: configuration
//! parsing, scheme execution and CSV/JSON outputs.

pub mod config;
pub mod error;
pub mod presets;
pub mod runner;

pub use config::{Scheme, ScenarioConfig};
pub use error::CliError;
pub use runner::{montecarlo_hedge, run, RunSummary};
