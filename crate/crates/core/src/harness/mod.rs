//! Experiment orchestration: loads scenarios, trains and adapts every method
//! across seeds, audits real-transition use and writes CSV reports.

mod config;
mod report;
mod run;

use thiserror::Error;

use crate::agent::AgentError;
use crate::meta::MetaError;
use crate::sim::SimError;

pub use crate::sim::load_scenario;
pub use config::{load_scenarios, DqnScratchConfig, ExperimentConfig, FixedCycleConfig, Method};
pub use report::{
    compare_methods, read_results, summarize, write_curves, write_results, write_round_logs, write_summary, write_timings,
    Comparison, ComparisonRow, CurvePoint, MethodScore, ResultRow, SummaryRow,
};
pub use run::{
    analytic_budget, evaluation_seeds, initial_params, run_experiment, run_fixed_cycle, train_meta_method,
    ExperimentOutput, FIXED_CYCLE_EPSILON,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("experiment config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(
        "real-transition audit failed for {method} on `{scenario}` (seed {seed}): counted {counted}, expected {expected}"
    )]
    Audit { method: String, scenario: String, seed: u64, counted: u64, expected: u64 },
    #[error("cannot compare: {0}")]
    Compare(String),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}
