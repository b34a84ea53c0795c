//! Command-line experiments for the learned BCD solvers: dataset
//! generation, labeling, training, evaluation and method comparison.

pub mod commands;
pub mod config;
pub mod defaults;
pub mod error;

pub use config::Options;
pub use error::{BenchError, Result};
