use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetaError;
use crate::agent::EpsilonSchedule;
use crate::dynamics::ModelTrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelOptimizer {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyOptimizer {
    Sgd,
}

/// How learned models are assigned to training tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// One model per task, trained on that task's data only.
    #[default]
    PerTask,
    /// One model trained on the pooled data of every task in the round.
    Single,
}

/// Meta-training hyperparameters. The first block holds the core algorithm
/// settings; the second holds implementation choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub meta_training_rounds: usize,
    pub lstm_training_epochs: usize,
    pub tasks_per_round: usize,
    pub real_transitions_per_task: usize,
    pub imaginary_transitions_per_task: usize,
    pub model_training_samples: usize,
    pub real_batch_size: usize,
    pub imaginary_batch_size: usize,
    pub adaptation_step_size: f64,
    pub meta_step_size: f64,
    pub meta_update_frequency: usize,
    pub model_optimizer: ModelOptimizer,
    pub policy_optimizer: PolicyOptimizer,
    pub initial_epsilon: f64,
    pub minimum_epsilon: f64,
    pub target_update_frequency: usize,

    pub rollout_length: usize,
    pub discount: f64,
    pub epsilon_decay: f64,
    /// Multiplies every reward before it enters a TD target.
    pub reward_scale: f64,
    pub model_learning_rate: f64,
    pub model_batch_size: usize,
    pub history_window: usize,
    pub ensemble: EnsembleMode,
    /// Runs the model-learning and imaginary phases of each round.
    pub use_model: bool,
    /// Exploration rate during the single meta-test adaptation episode.
    pub adaptation_epsilon: f64,
    /// Exploration rate of the frozen evaluation episode.
    pub evaluation_epsilon: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            meta_training_rounds: 100,
            lstm_training_epochs: 200,
            tasks_per_round: 2,
            real_transitions_per_task: 360,
            imaginary_transitions_per_task: 360,
            model_training_samples: 300,
            real_batch_size: 30,
            imaginary_batch_size: 100,
            adaptation_step_size: 0.001,
            meta_step_size: 0.001,
            meta_update_frequency: 10,
            model_optimizer: ModelOptimizer::Adam,
            policy_optimizer: PolicyOptimizer::Sgd,
            initial_epsilon: 0.8,
            minimum_epsilon: 0.2,
            target_update_frequency: 5,
            rollout_length: 36,
            discount: 0.9,
            epsilon_decay: 0.95,
            reward_scale: 0.01,
            model_learning_rate: 1e-3,
            model_batch_size: 32,
            history_window: 2,
            ensemble: EnsembleMode::PerTask,
            use_model: true,
            adaptation_epsilon: 0.8,
            evaluation_epsilon: 0.2,
        }
    }
}

impl MetaConfig {
    pub fn from_json(text: &str) -> Result<Self, MetaError> {
        let cfg: MetaConfig = serde_json::from_str(text).map_err(|e| MetaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MetaError::Config(format!("{}: {e}", path.display())))?;
        MetaConfig::from_json(&text).map_err(|e| MetaError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |field: &str, reason: &str| Err(MetaError::Config(format!("`{field}`: {reason}")));
        let positive = [
            ("meta_training_rounds", self.meta_training_rounds),
            ("tasks_per_round", self.tasks_per_round),
            ("real_transitions_per_task", self.real_transitions_per_task),
            ("real_batch_size", self.real_batch_size),
            ("imaginary_batch_size", self.imaginary_batch_size),
            ("meta_update_frequency", self.meta_update_frequency),
            ("target_update_frequency", self.target_update_frequency),
            ("rollout_length", self.rollout_length),
            ("model_batch_size", self.model_batch_size),
            ("history_window", self.history_window),
        ];
        for (field, v) in positive {
            if v == 0 {
                return bad(field, "must be positive");
            }
        }
        if self.use_model && (self.model_training_samples == 0 || self.lstm_training_epochs == 0) {
            return bad("model_training_samples", "model phases need samples and epochs");
        }
        if self.meta_update_frequency > self.real_transitions_per_task {
            return bad("meta_update_frequency", "must not exceed real_transitions_per_task");
        }
        if self.imaginary_transitions_per_task > 0 && self.meta_update_frequency > self.imaginary_transitions_per_task {
            return bad("meta_update_frequency", "must not exceed imaginary_transitions_per_task");
        }
        for (field, v) in [
            ("adaptation_step_size", self.adaptation_step_size),
            ("meta_step_size", self.meta_step_size),
            ("reward_scale", self.reward_scale),
            ("model_learning_rate", self.model_learning_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(field, "must be finite and non-negative");
            }
        }
        for (field, v) in [
            ("initial_epsilon", self.initial_epsilon),
            ("minimum_epsilon", self.minimum_epsilon),
            ("adaptation_epsilon", self.adaptation_epsilon),
            ("evaluation_epsilon", self.evaluation_epsilon),
            ("epsilon_decay", self.epsilon_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        if self.minimum_epsilon > self.initial_epsilon {
            return bad("minimum_epsilon", "exceeds initial_epsilon");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule { initial: self.initial_epsilon, minimum: self.minimum_epsilon, decay: self.epsilon_decay }
    }

    pub fn model_training(&self) -> ModelTrainingConfig {
        ModelTrainingConfig {
            epochs: self.lstm_training_epochs,
            batch_size: self.model_batch_size,
            learning_rate: self.model_learning_rate,
            history_window: self.history_window,
        }
    }

    /// Real transitions consumed by meta-training.
    pub fn real_budget(&self) -> u64 {
        (self.meta_training_rounds * self.tasks_per_round * self.real_transitions_per_task) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_table() {
        let c = MetaConfig::default();
        assert_eq!(c.meta_training_rounds, 100);
        assert_eq!(c.lstm_training_epochs, 200);
        assert_eq!(c.tasks_per_round, 2);
        assert_eq!(c.real_transitions_per_task, 360);
        assert_eq!(c.imaginary_transitions_per_task, 360);
        assert_eq!(c.model_training_samples, 300);
        assert_eq!(c.real_batch_size, 30);
        assert_eq!(c.imaginary_batch_size, 100);
        assert_eq!(c.adaptation_step_size, 0.001);
        assert_eq!(c.meta_step_size, 0.001);
        assert_eq!(c.meta_update_frequency, 10);
        assert_eq!(c.model_optimizer, ModelOptimizer::Adam);
        assert_eq!(c.policy_optimizer, PolicyOptimizer::Sgd);
        assert_eq!(c.initial_epsilon, 0.8);
        assert_eq!(c.minimum_epsilon, 0.2);
        assert_eq!(c.target_update_frequency, 5);
        assert_eq!(c.rollout_length, 36);
        assert_eq!(c.real_budget(), 72_000);
        c.validate().unwrap();
    }

    #[test]
    fn json_roundtrip_and_partial_files() {
        let c = MetaConfig { meta_training_rounds: 10, ..MetaConfig::default() };
        assert_eq!(MetaConfig::from_json(&c.to_json()).unwrap(), c);
        let partial = MetaConfig::from_json(r#"{"meta_training_rounds": 3, "model_optimizer": "adam"}"#).unwrap();
        assert_eq!(partial.meta_training_rounds, 3);
        assert_eq!(partial.real_batch_size, 30);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(MetaConfig::from_json(r#"{"rounds": 3}"#).is_err());
        assert!(MetaConfig::from_json(r#"{"policy_optimizer": "adam"}"#).is_err());
        for bad in [
            MetaConfig { meta_update_frequency: 400, ..MetaConfig::default() },
            MetaConfig { tasks_per_round: 0, ..MetaConfig::default() },
            MetaConfig { discount: 1.0, ..MetaConfig::default() },
            MetaConfig { minimum_epsilon: 0.9, ..MetaConfig::default() },
            MetaConfig { adaptation_step_size: -1.0, ..MetaConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        MetaConfig { imaginary_transitions_per_task: 0, ..MetaConfig::default() }.validate().unwrap();
    }
}
