//! Configuration, orchestration and result files for the `spde-lab` binary.

pub mod config;
pub mod error;
pub mod plot;
pub mod run;

pub use config::{parse_config, resolve_seed, Experiment, RunConfig, SEED_ENV};
pub use error::CliError;
pub use plot::emit_plot_data;
pub use run::{run, RunOutcome};
