//! Experiment runner for the `rs2acf` library: clustering, classification,
//! weight comparison and convergence traces, each written as one JSON file.

pub mod commands;
pub mod config;

pub use commands::{run, Outcome};
pub use config::{BlobArgs, Method, RunConfig, Task};
