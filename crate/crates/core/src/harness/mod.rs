//! Experiment plumbing: synthetic data, CSV and JSON I/O, config files and
//! the runner behind the command line.

pub mod config;
pub mod csv_io;
pub mod experiments;
pub mod generate;
pub mod report;

pub use config::{shipped_config, shipped_configs, DatasetSource, Experiment, ExperimentConfig};
pub use csv_io::{load_csv, save_csv};
pub use experiments::{execute, exit_code, run, RunOptions, RunOutput};
pub use generate::{gen_data, GeneratorSpec};
pub use report::to_canonical_string;
