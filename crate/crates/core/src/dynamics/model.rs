use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DynamicsError, TransitionSet};
use crate::nn::{adam_update, zeros_like, Activation, AdamState, Dense, Lstm, Parameters};
use crate::sim::{Observation, PhaseTable, Transition, NUM_MOVEMENTS, NUM_PRIMARY_PHASES, OBS_DIM};

pub const MODEL_INPUT_DIM: usize = NUM_MOVEMENTS + NUM_PRIMARY_PHASES;
pub const MODEL_OUTPUT_DIM: usize = NUM_MOVEMENTS + 1;
pub const LSTM_SIZES: [usize; 3] = [MODEL_INPUT_DIM, 16, 64];

/// Raw model input: the queue block of `obs` followed by a one-hot of the
/// action's primary phase id. The observation's own phase block is dropped.
pub fn encode_model_input(obs: &Observation, primary_action: usize) -> Result<[f64; MODEL_INPUT_DIM], DynamicsError> {
    if primary_action >= NUM_PRIMARY_PHASES {
        return Err(DynamicsError::InvalidAction(primary_action));
    }
    let mut v = [0.0; MODEL_INPUT_DIM];
    v[..NUM_MOVEMENTS].copy_from_slice(&obs.0[..NUM_MOVEMENTS]);
    v[NUM_MOVEMENTS + primary_action] = 1.0;
    Ok(v)
}

/// Fixed scales applied to model inputs and targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub queue_scale: f64,
    pub reward_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { queue_scale: 20.0, reward_scale: 8.0 * 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelTrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Consecutive steps fed to the LSTM per prediction.
    pub history_window: usize,
}

impl Default for ModelTrainingConfig {
    fn default() -> Self {
        ModelTrainingConfig { epochs: 200, batch_size: 32, learning_rate: 1e-3, history_window: 2 }
    }
}

/// Anything that predicts `(s', r)` from a short history of
/// `(observation, primary action)` pairs ending at the step to predict.
pub trait DynamicsModel {
    fn predict_history(&self, history: &[(Observation, usize)]) -> Result<(Observation, f64), DynamicsError>;

    fn predict(&self, obs: &Observation, primary_action: usize) -> Result<(Observation, f64), DynamicsError> {
        self.predict_history(&[(*obs, primary_action)])
    }
}

/// Trainable weights of an intersection model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lstm: Lstm,
    pub head: Dense,
}

impl Parameters for ModelParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.lstm.visit(&mut |n, s, d| f(&format!("lstm.{n}"), s, d));
        self.head.visit(&mut |n, s, d| f(&format!("head.{n}"), s, d));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.lstm.visit_mut(&mut |n, d| f(&format!("lstm.{n}"), d));
        self.head.visit_mut(&mut |n, d| f(&format!("head.{n}"), d));
    }
}

/// LSTM (16 -> 16 -> 64) followed by a linear 64 -> 9 head predicting the
/// eight next queues and the reward.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionModel {
    pub id: usize,
    pub params: ModelParams,
    pub adam: AdamState,
    pub norm: Normalization,
}

/// One supervised example: a normalized input sequence and its target.
#[derive(Debug, Clone)]
pub struct ModelSample {
    pub inputs: Vec<Vec<f64>>,
    pub target: [f64; MODEL_OUTPUT_DIM],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    /// Mean per-sample squared error, per epoch, in normalized units.
    pub epoch_losses: Vec<f64>,
}

impl TrainingReport {
    pub fn first(&self) -> f64 {
        self.epoch_losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

impl IntersectionModel {
    pub fn new<R: Rng + ?Sized>(id: usize, rng: &mut R) -> Self {
        let params = ModelParams {
            lstm: Lstm::new(&LSTM_SIZES, rng),
            head: Dense::new(LSTM_SIZES[2], MODEL_OUTPUT_DIM, rng),
        };
        let adam = AdamState::for_params(&params);
        IntersectionModel { id, params, adam, norm: Normalization::default() }
    }

    /// All-zero weights; predicts empty queues and zero reward.
    pub fn zeros(id: usize) -> Self {
        let params = ModelParams {
            lstm: Lstm::zeros(&LSTM_SIZES),
            head: Dense::zeros(LSTM_SIZES[2], MODEL_OUTPUT_DIM),
        };
        let adam = AdamState::for_params(&params);
        IntersectionModel { id, params, adam, norm: Normalization::default() }
    }

    fn normalize_input(&self, raw: &[f64; MODEL_INPUT_DIM]) -> Vec<f64> {
        let mut v = raw.to_vec();
        v[..NUM_MOVEMENTS].iter_mut().for_each(|q| *q /= self.norm.queue_scale);
        v
    }

    fn normalize_target(&self, t: &Transition) -> [f64; MODEL_OUTPUT_DIM] {
        let mut y = [0.0; MODEL_OUTPUT_DIM];
        for k in 0..NUM_MOVEMENTS {
            y[k] = t.next_obs.0[k] / self.norm.queue_scale;
        }
        y[NUM_MOVEMENTS] = t.reward / self.norm.reward_scale;
        y
    }

    /// Raw head output, in normalized units.
    pub fn forward_raw(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>, DynamicsError> {
        let (h, _) = self.params.lstm.forward(inputs)?;
        let (y, _) = self.params.head.forward(&h, Activation::Identity)?;
        Ok(y)
    }

    /// Builds supervised samples for `indices` of `set`, chaining up to
    /// `history_window` contiguous predecessors into each input sequence.
    pub fn samples(&self, set: &TransitionSet, indices: &[usize], history_window: usize) -> Result<Vec<ModelSample>, DynamicsError> {
        indices
            .iter()
            .map(|&i| {
                let history = set.history(i, history_window.max(1));
                let inputs = history
                    .iter()
                    .map(|t| {
                        let primary = set.table().phase(t.action)?.id;
                        Ok(self.normalize_input(&encode_model_input(&t.obs, primary)?))
                    })
                    .collect::<Result<Vec<_>, DynamicsError>>()?;
                Ok(ModelSample { inputs, target: self.normalize_target(&set.as_slice()[i]) })
            })
            .collect()
    }

    /// Mean squared error (summed over outputs) and its gradient over `batch`.
    pub fn loss_and_gradient(&self, batch: &[ModelSample]) -> Result<(f64, ModelParams), DynamicsError> {
        let mut grads = zeros_like(&self.params);
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for sample in batch {
            let (h, lstm_cache) = self.params.lstm.forward(&sample.inputs)?;
            let (y, head_cache) = self.params.head.forward(&h, Activation::Identity)?;
            let mut dy = vec![0.0; MODEL_OUTPUT_DIM];
            for k in 0..MODEL_OUTPUT_DIM {
                let r = y[k] - sample.target[k];
                loss += r * r * scale;
                dy[k] = 2.0 * r * scale;
            }
            let dh = self.params.head.backward(&head_cache, &dy, &mut grads.head)?;
            self.params.lstm.backward(&lstm_cache, &dh, &mut grads.lstm)?;
        }
        if !loss.is_finite() {
            return Err(DynamicsError::Divergence(self.id));
        }
        Ok((loss, grads))
    }

    /// Minimizes the mean `||(s', r) - M(s, a)||^2` with Adam over shuffled
    /// minibatches; gradients accumulate over a batch before each update.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        samples: &[ModelSample],
        cfg: &ModelTrainingConfig,
        rng: &mut R,
    ) -> Result<TrainingReport, DynamicsError> {
        if samples.is_empty() {
            return Err(DynamicsError::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut report = TrainingReport::default();
        let batch_size = cfg.batch_size.max(1);
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch_size) {
                let batch: Vec<ModelSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let (loss, grads) = self.loss_and_gradient(&batch)?;
                epoch_loss += loss * batch.len() as f64;
                adam_update(&mut self.params, &grads, &mut self.adam, cfg.learning_rate)?;
            }
            report.epoch_losses.push(epoch_loss / samples.len() as f64);
        }
        Ok(report)
    }

    /// Mean squared error over `samples` without updating anything.
    pub fn evaluate(&self, samples: &[ModelSample]) -> Result<f64, DynamicsError> {
        Ok(self.loss_and_gradient(samples)?.0)
    }
}

impl DynamicsModel for IntersectionModel {
    /// De-normalizes the head output, clamps queues at 0 and the reward at
    /// 0 from above, and sets the phase block to the action taken.
    fn predict_history(&self, history: &[(Observation, usize)]) -> Result<(Observation, f64), DynamicsError> {
        let (_, last_action) = *history.last().ok_or(DynamicsError::EmptySource)?;
        let inputs = history
            .iter()
            .map(|(obs, a)| Ok(self.normalize_input(&encode_model_input(obs, *a)?)))
            .collect::<Result<Vec<_>, DynamicsError>>()?;
        let y = self.forward_raw(&inputs).map_err(|e| match e {
            DynamicsError::Nn(crate::nn::NnError::NonFinite(_)) => DynamicsError::Divergence(self.id),
            other => other,
        })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Divergence(self.id));
        }
        let queues: [f64; NUM_MOVEMENTS] = std::array::from_fn(|k| (y[k] * self.norm.queue_scale).max(0.0));
        let reward = (y[NUM_MOVEMENTS] * self.norm.reward_scale).min(0.0);
        Ok((Observation::new(queues, last_action), reward))
    }
}

/// Convenience for one-step prediction with a table-relative action.
pub fn predict_with_table<M: DynamicsModel + ?Sized>(
    model: &M,
    obs: &Observation,
    action: usize,
    table: &PhaseTable,
) -> Result<(Observation, f64), DynamicsError> {
    let primary = table.phase(action)?.id;
    model.predict(obs, primary)
}

/// One-step fit of a model on a dataset in raw units: the summed squared
/// error against the summed variance of each target dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub mse: f64,
    pub target_variance: f64,
}

impl FitReport {
    pub fn ratio(&self) -> f64 {
        if self.target_variance > 0.0 {
            self.mse / self.target_variance
        } else {
            f64::INFINITY
        }
    }
}

/// Scores one-step predictions over `data`, feeding each prediction up to
/// `history_window` contiguous preceding steps.
pub fn evaluate_fit<M: DynamicsModel + ?Sized>(
    model: &M,
    data: &[Transition],
    table: &PhaseTable,
    history_window: usize,
) -> Result<FitReport, DynamicsError> {
    if data.is_empty() {
        return Err(DynamicsError::EmptyDataset);
    }
    let mut set = TransitionSet::new(table.clone());
    set.extend(data.iter().copied());
    let n = data.len() as f64;
    let target = |t: &Transition| -> [f64; MODEL_OUTPUT_DIM] {
        std::array::from_fn(|k| if k < NUM_MOVEMENTS { t.next_obs.0[k] } else { t.reward })
    };
    let mut mean = [0.0; MODEL_OUTPUT_DIM];
    for t in data {
        for (m, y) in mean.iter_mut().zip(target(t)) {
            *m += y / n;
        }
    }
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (i, t) in data.iter().enumerate() {
        let history = set
            .history(i, history_window.max(1))
            .iter()
            .map(|h| Ok((h.obs, table.phase(h.action)?.id)))
            .collect::<Result<Vec<_>, DynamicsError>>()?;
        let (pred, reward) = model.predict_history(&history)?;
        let y = target(t);
        for k in 0..MODEL_OUTPUT_DIM {
            let p = if k < NUM_MOVEMENTS { pred.0[k] } else { reward };
            sse += (p - y[k]).powi(2);
            sst += (y[k] - mean[k]).powi(2);
        }
    }
    Ok(FitReport { mse: sse / n, target_variance: sst / n })
}

const _: () = assert!(OBS_DIM == MODEL_INPUT_DIM);
