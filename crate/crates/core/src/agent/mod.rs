//! Value-based signal policy: a shared-parameter phase-scoring Q-network
//! trained with DQN against a periodically synchronized target network.

mod dqn;
mod network;

use thiserror::Error;

use crate::nn::NnError;
use crate::sim::SimError;

pub use dqn::{
    argmax, bellman_targets, dqn_gradient_step, dqn_loss_and_gradient, greedy_action, load_policy, save_policy,
    select_action, sync_target, EpsilonSchedule, ReplayBatch, TargetNetwork,
};
pub use network::{movement_features, networks_constructed, q_values, PolicyParams, EMBED_DIM, MOVEMENT_FEATURES, QUEUE_SCALE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("cannot select an action from an empty Q vector")]
    EmptyQ,
    #[error("epsilon {0} outside [0, 1]")]
    InvalidEpsilon(f64),
    #[error("replay batch is empty")]
    EmptyBatch,
    #[error("replay batch mixes real and imaginary transitions")]
    MixedBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
