//! Scenarios, metrics, comparison and benchmarking around `apbf-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod error;
pub mod metrics;
pub mod run;
pub mod scenario;

pub use error::{HarnessError, Result};
pub use run::{run, RunOptions, RunReport, Simulation};
pub use scenario::{build_scenario, spawn_block, Overrides, ScenarioSpec, Settle};
