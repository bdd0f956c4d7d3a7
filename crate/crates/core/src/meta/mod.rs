//! Meta-training of the signal policy across a distribution of intersection
//! tasks, alternating real and model-generated adaptation, and meta-test
//! adaptation on unseen tasks.

mod config;
mod evaluate;
mod source;
mod train;

use thiserror::Error;

use crate::agent::AgentError;
use crate::dynamics::DynamicsError;
use crate::nn::NnError;
use crate::sim::SimError;

pub use config::{EnsembleMode, MetaConfig, ModelOptimizer, PolicyOptimizer};
pub use evaluate::{
    adapt_and_evaluate, evaluate_policy, meta_test, DqnLearner, EvalSeeds, EvaluationSummary, MetaTestResult,
};
pub use source::{ImaginarySource, RealSource, TaskPool, TransitionSource};
pub use train::{
    inner_adapt, meta_gradient, meta_train, meta_update, AdaptSettings, Adaptation, AdaptedTask, MetaState,
    MetaTrainOutput, RoundLog,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("config: {0}")]
    Config(String),
    #[error("task pool is empty")]
    EmptyPool,
    #[error("task `{0}` appears twice in the pool")]
    DuplicateTask(String),
    #[error("no transitions of the required kind to sample from")]
    EmptyBuffer,
    #[error("meta update needs at least one adapted task")]
    NoAdaptedTasks,
    #[error("no model paired with task `{0}`")]
    MissingModel(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
