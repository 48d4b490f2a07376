//! Experiment harness: configuration, the sequential filtering loop with
//! seeded replications, the worked-example demo, and the oracle check
//! suite. The `binfilter` binary is a thin wrapper over this library.

pub mod config;
pub mod oracle_suite;
pub mod runner;
pub mod toy;

pub use config::{ExperimentConfig, MethodSet};
pub use runner::{run_experiment, run_filter_replication, ExperimentSummary, FilterRun, Method};

/// Process exit codes shared by all subcommands.
pub mod exit_codes {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const CHECK_FAILURE: i32 = 2;
    pub const RUNTIME: i32 = 3;
}
