//! Learned intersection dynamics: per-task LSTM models of `(s, a) -> (s', r)`,
//! their training data and the imaginary rollouts they generate.

mod buffer;
mod ensemble;
mod model;
mod rollout;

use thiserror::Error;

use crate::nn::NnError;
use crate::sim::SimError;

pub use buffer::TransitionSet;
pub use ensemble::{ModelEnsemble, OracleModel, MANIFEST_FILE};
pub use model::{
    encode_model_input, evaluate_fit, predict_with_table, DynamicsModel, FitReport, IntersectionModel,
    ModelParams, ModelSample, ModelTrainingConfig, Normalization, TrainingReport, LSTM_SIZES,
    MODEL_INPUT_DIM, MODEL_OUTPUT_DIM,
};
pub use rollout::{generate_imaginary_rollouts, RolloutGenerator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("primary phase {0} is not a valid model action")]
    InvalidAction(usize),
    #[error("no real transitions to start rollouts from")]
    EmptySource,
    #[error("cannot train a model on an empty dataset")]
    EmptyDataset,
    #[error("model {0} produced non-finite values")]
    Divergence(usize),
    #[error("rollout length must be positive")]
    InvalidRolloutLength,
    #[error("oracle model requires deterministic arrivals")]
    OracleNeedsDeterministicArrivals,
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
