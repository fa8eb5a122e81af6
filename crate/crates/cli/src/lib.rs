//! Scenario configuration, orchestration, and result emission for the
//! diffusion-ensemble robustness library.

pub mod catalog;
pub mod config;
pub mod emit;
pub mod run;

pub use config::{parse_scenario, ConfigError, ScenarioConfig, ScenarioKind};
pub use run::{run_scenario, RunManifest, RunOutcome};
