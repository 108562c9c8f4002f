//! Scenario runner: configuration, orchestration and CSV output for the
//! `hinfq` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_amod, cmd_bench, cmd_learn, cmd_solve_riccati, AmodCommand};
pub use config::ScenarioConfig;
pub use error::{CliError, CliResult};
pub use output::{verify_manifest, RunReport};
