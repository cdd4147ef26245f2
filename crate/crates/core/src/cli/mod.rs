//! Batch front end: configuration parsing, command dispatch and CSV output.

pub mod config;
pub mod csv;
pub mod run;

pub use config::{parse_config, RawConfig, Resolved};
pub use run::{run, run_to_output, Command, Method, RunSpec, SweepAxis};
