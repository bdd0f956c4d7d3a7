//! Queue-based single-intersection simulator.
//!
//! Each decision interval, arrivals join their movement's FIFO queue and
//! every movement of the chosen phase discharges up to the saturation flow.
//! Changing phase costs a fraction of that interval's capacity.

mod engine;
mod phase;
mod scenario;

use std::path::Path;

use thiserror::Error;

pub use engine::{
    average_travel_time, decode_queues, encode_state, run_episode, step, EpisodeStats, FixedCycle,
    IntersectionState, Observation, Simulator, StepOutcome, StepStats, Transition, TransitionKind,
    TransitionMeter, TravelTime, OBS_DIM,
};
pub use phase::{
    build_phase_table, Approach, Movement, Phase, PhaseTable, Turn, NUM_MOVEMENTS, NUM_PRIMARY_PHASES,
};
pub use scenario::{
    load_scenario, sample_arrivals, ArrivalProcess, ArrivalSegment, Scenario, ScenarioFile,
    DEFAULT_DECISION_INTERVAL_S, DEFAULT_HORIZON_STEPS, DEFAULT_SATURATION, DEFAULT_SWITCH_LOSS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("phase table must hold 4, 6 or 8 phases, got {0}")]
    PhaseTableLength(usize),
    #[error("primary phase id {0} out of range 0..8")]
    PhaseIdOutOfRange(usize),
    #[error("primary phase {0} listed twice")]
    DuplicatePhase(usize),
    #[error("action {action} is not a valid phase index for a {phases}-phase table")]
    InvalidAction { action: usize, phases: usize },
    #[error("episode already reached its horizon of {0} steps")]
    EpisodeFinished(usize),
    #[error("scenario `{scenario}`: field `{field}`: {reason}")]
    InvalidScenario { scenario: String, field: String, reason: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(
        "vehicle conservation violated at step {step}: arrived {arrived} != departed {departed} + remaining {remaining}"
    )]
    Conservation { step: usize, arrived: u64, departed: u64, remaining: u64 },
}

impl SimError {
    /// Prefixes a diagnostic with the file it came from.
    pub(crate) fn in_file(self, path: &Path) -> SimError {
        match self {
            SimError::Io { .. } => self,
            other => SimError::Io {
                path: path.display().to_string(),
                message: other.to_string(),
            },
        }
    }
}
