//! Experiment runner and command-line front end for `ctsmc`.

pub mod commands;
pub mod compare;
pub mod config;
pub mod experiment;
pub mod generate;

pub use commands::{run, Cli};
pub use config::{ExperimentConfig, Family, GammaPrior, Hyperpriors};
pub use experiment::{run_experiment, Manifest, RunMetrics, RunRecord};
pub use generate::generate_random_model;
