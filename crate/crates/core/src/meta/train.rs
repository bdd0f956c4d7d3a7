use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::source::{ImaginarySource, RealSource, TaskPool, TransitionSource};
use super::{EnsembleMode, MetaConfig, MetaError};
use crate::agent::{
    dqn_gradient_step, dqn_loss_and_gradient, q_values, select_action, PolicyParams, ReplayBatch, TargetNetwork,
};
use crate::dynamics::{DynamicsModel, ModelEnsemble, ModelSample, TransitionSet};
use crate::nn::{accumulate, sgd_update, zeros_like};
use crate::sim::{average_travel_time, PhaseTable, Simulator, Transition, TransitionKind, TransitionMeter};

/// Settings of one adaptation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptSettings {
    pub steps: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub reward_scale: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub params: PolicyParams,
    pub transitions: Vec<Transition>,
    pub gradient_steps: usize,
    pub mean_loss: f64,
}

/// Copies `theta`, then for each step draws one transition from `source`
/// with the adapting policy, appends it to `buffer`, samples a batch of the
/// source's kind and takes one SGD step at `alpha` against `target`.
pub fn inner_adapt<S, R>(
    theta: &PolicyParams,
    source: &mut S,
    buffer: &mut TransitionSet,
    target: &PolicyParams,
    settings: &AdaptSettings,
    rng: &mut R,
) -> Result<Adaptation, MetaError>
where
    S: TransitionSource + ?Sized,
    R: Rng + ?Sized,
{
    if settings.steps == 0 {
        return Err(MetaError::Config("adaptation needs at least one step".into()));
    }
    if !(0.0..=1.0).contains(&settings.epsilon) {
        return Err(MetaError::Agent(crate::agent::AgentError::InvalidEpsilon(settings.epsilon)));
    }
    let table = source.table().clone();
    let kind = source.kind();
    let mut params = theta.clone();
    let mut transitions = Vec::with_capacity(settings.steps);
    let mut total_loss = 0.0;
    for _ in 0..settings.steps {
        let t = {
            let params = &params;
            let rng = &mut *rng;
            let mut policy = |obs: &crate::sim::Observation| {
                select_action(&q_values(params, obs, &table), settings.epsilon, rng).expect("validated epsilon")
            };
            source.next_transition(&mut policy)?
        };
        buffer.push(t);
        transitions.push(t);
        let sample = buffer.sample(settings.batch_size, Some(kind), rng);
        if sample.is_empty() {
            return Err(MetaError::EmptyBuffer);
        }
        let batch = ReplayBatch::new(sample)?.scaled(settings.reward_scale);
        total_loss += dqn_gradient_step(&mut params, &batch, target, settings.gamma, settings.alpha, &table)?;
    }
    Ok(Adaptation {
        params,
        transitions,
        gradient_steps: settings.steps,
        mean_loss: total_loss / settings.steps as f64,
    })
}

/// The meta policy, its target network and a count of its updates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    theta: PolicyParams,
    version: u64,
    target: TargetNetwork,
}

impl MetaState {
    pub fn new(theta: PolicyParams, target_period: usize) -> Self {
        let target = TargetNetwork::new(&theta, target_period);
        MetaState { theta, version: 0, target }
    }

    pub fn theta(&self) -> &PolicyParams {
        &self.theta
    }

    pub fn target(&self) -> &PolicyParams {
        &self.target.params
    }

    /// Number of meta updates applied to θ so far.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn into_theta(self) -> PolicyParams {
        self.theta
    }
}

/// An adapted policy with the fresh batch its outer loss is evaluated on.
#[derive(Debug, Clone, Copy)]
pub struct AdaptedTask<'a> {
    pub params: &'a PolicyParams,
    pub batch: &'a ReplayBatch,
    pub table: &'a PhaseTable,
}

/// First-order meta-gradient: each task's DQN loss gradient taken at its
/// adapted parameters, summed. Returns the mean task loss and the sum.
pub fn meta_gradient(
    like: &PolicyParams,
    adapted: &[AdaptedTask<'_>],
    target: &PolicyParams,
    gamma: f64,
) -> Result<(f64, PolicyParams), MetaError> {
    if adapted.is_empty() {
        return Err(MetaError::NoAdaptedTasks);
    }
    let mut sum = zeros_like(like);
    let mut loss = 0.0;
    for task in adapted {
        let (l, g) = dqn_loss_and_gradient(task.params, task.batch, target, gamma, task.table)?;
        accumulate(&mut sum, &g, 1.0)?;
        loss += l / adapted.len() as f64;
    }
    Ok((loss, sum))
}

/// `theta <- theta - beta * sum_i grad L_i(theta'_i)`; counts the update
/// towards the target-network period.
pub fn meta_update(state: &mut MetaState, adapted: &[AdaptedTask<'_>], beta: f64, gamma: f64) -> Result<f64, MetaError> {
    let (loss, grads) = meta_gradient(&state.theta, adapted, &state.target.params, gamma)?;
    sgd_update(&mut state.theta, &grads, beta)?;
    state.version += 1;
    state.target.record_update(&state.theta);
    Ok(loss)
}

/// Per-round record of meta-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub tasks: Vec<String>,
    pub epsilon: f64,
    pub buffer_sizes_at_start: Vec<usize>,
    pub real_transitions: u64,
    /// Real transitions counted by the simulators during the imaginary phase.
    pub real_transitions_imaginary_phase: u64,
    pub imaginary_transitions: u64,
    pub meta_updates: u64,
    pub theta_version: u64,
    pub real_loss: f64,
    pub imaginary_loss: f64,
    pub model_loss: Vec<f64>,
    pub travel_time_s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutput {
    pub theta: PolicyParams,
    pub ensemble: Option<ModelEnsemble>,
    pub logs: Vec<RoundLog>,
    pub real_transitions: u64,
    pub imaginary_transitions: u64,
}

struct TaskRun {
    name: String,
    member: Option<usize>,
    sim: Simulator<ChaCha8Rng>,
    buffer: TransitionSet,
    policy_rng: ChaCha8Rng,
    model_rng: ChaCha8Rng,
    rollout_rng: ChaCha8Rng,
}

fn window_sizes(total: usize, m: usize) -> impl Iterator<Item = usize> {
    (0..total.div_ceil(m)).map(move |w| m.min(total - w * m))
}

/// Runs `H` rounds of: real adaptation windows with meta updates, model
/// learning, then imaginary adaptation windows with meta updates.
pub fn meta_train<R: Rng + ?Sized>(
    pool: &TaskPool,
    cfg: &MetaConfig,
    initial: PolicyParams,
    rng: &mut R,
    meter: &TransitionMeter,
) -> Result<MetaTrainOutput, MetaError> {
    cfg.validate()?;
    let mut state = MetaState::new(initial, cfg.target_update_frequency);
    let mut ensemble = if cfg.use_model {
        let mut model_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        Some(match cfg.ensemble {
            EnsembleMode::PerTask => ModelEnsemble::per_task(pool.names(), &mut model_rng),
            EnsembleMode::Single => ModelEnsemble::single(pool.names(), &mut model_rng),
        })
    } else {
        None
    };
    let schedule = cfg.epsilon_schedule();
    let mut logs = Vec::with_capacity(cfg.meta_training_rounds);
    let mut imaginary_total = 0u64;
    let start_count = meter.count();

    for round in 0..cfg.meta_training_rounds {
        let epsilon = schedule.value(round);
        let picked = pool.sample(cfg.tasks_per_round, rng);
        let mut runs: Vec<TaskRun> = picked
            .iter()
            .map(|&i| {
                let scenario = pool.tasks()[i].clone();
                let name = scenario.name.clone();
                let member = ensemble.as_ref().and_then(|e| e.member_for(&name));
                let buffer = TransitionSet::new(scenario.phase_table.clone());
                TaskRun {
                    name,
                    member,
                    sim: Simulator::new(scenario, ChaCha8Rng::seed_from_u64(rng.gen())).with_meter(meter.clone()),
                    buffer,
                    policy_rng: ChaCha8Rng::seed_from_u64(rng.gen()),
                    model_rng: ChaCha8Rng::seed_from_u64(rng.gen()),
                    rollout_rng: ChaCha8Rng::seed_from_u64(rng.gen()),
                }
            })
            .collect();
        let buffer_sizes_at_start = runs.iter().map(|r| r.buffer.len()).collect();
        let round_start = meter.count();
        let version_start = state.version;

        let settings = |steps, batch_size| AdaptSettings {
            steps,
            alpha: cfg.adaptation_step_size,
            batch_size,
            gamma: cfg.discount,
            reward_scale: cfg.reward_scale,
            epsilon,
        };

        let mut real_losses = Vec::new();
        for steps in window_sizes(cfg.real_transitions_per_task, cfg.meta_update_frequency) {
            let mut adapted = Vec::with_capacity(runs.len());
            for run in runs.iter_mut() {
                let mut source = RealSource::new(&mut run.sim);
                let a = inner_adapt(
                    &state.theta,
                    &mut source,
                    &mut run.buffer,
                    &state.target.params,
                    &settings(steps, cfg.real_batch_size),
                    &mut run.policy_rng,
                )?;
                let fresh = run.buffer.sample(cfg.real_batch_size, Some(TransitionKind::Real), &mut run.policy_rng);
                adapted.push((a.params, ReplayBatch::new(fresh)?.scaled(cfg.reward_scale)));
            }
            let tasks: Vec<AdaptedTask> = adapted
                .iter()
                .zip(&runs)
                .map(|((p, b), run)| AdaptedTask { params: p, batch: b, table: run.buffer.table() })
                .collect();
            real_losses.push(meta_update(&mut state, &tasks, cfg.meta_step_size, cfg.discount)?);
        }
        let travel_time_s = runs.iter_mut().map(|r| average_travel_time(&r.sim.finish()).seconds).collect();
        let real_transitions = meter.count() - round_start;

        let mut model_loss = Vec::new();
        let mut imaginary_losses = Vec::new();
        let mut imaginary_round = 0u64;
        let before_imaginary = meter.count();
        if let Some(ensemble) = ensemble.as_mut() {
            train_models(ensemble, &mut runs, cfg, &mut model_loss)?;
            if cfg.imaginary_transitions_per_task > 0 {
                let starts: Vec<Vec<Transition>> =
                    runs.iter().map(|r| r.buffer.of_kind(TransitionKind::Real)).collect();
                for steps in window_sizes(cfg.imaginary_transitions_per_task, cfg.meta_update_frequency) {
                    let mut adapted = Vec::with_capacity(runs.len());
                    for (run, starts) in runs.iter_mut().zip(&starts) {
                        let model = &ensemble.models[run.member.ok_or_else(|| MetaError::MissingModel(run.name.clone()))?];
                        let table = run.buffer.table().clone();
                        let mut source = ImaginarySource::new(
                            model as &dyn DynamicsModel,
                            starts,
                            &table,
                            cfg.rollout_length,
                            cfg.history_window,
                            ChaCha8Rng::seed_from_u64(run.rollout_rng.gen()),
                        )?;
                        let a = inner_adapt(
                            &state.theta,
                            &mut source,
                            &mut run.buffer,
                            &state.target.params,
                            &settings(steps, cfg.imaginary_batch_size),
                            &mut run.policy_rng,
                        )?;
                        imaginary_round += a.transitions.len() as u64;
                        let fresh =
                            run.buffer.sample(cfg.imaginary_batch_size, Some(TransitionKind::Imaginary), &mut run.policy_rng);
                        adapted.push((a.params, ReplayBatch::new(fresh)?.scaled(cfg.reward_scale)));
                    }
                    let tasks: Vec<AdaptedTask> = adapted
                        .iter()
                        .zip(&runs)
                        .map(|((p, b), run)| AdaptedTask { params: p, batch: b, table: run.buffer.table() })
                        .collect();
                    imaginary_losses.push(meta_update(&mut state, &tasks, cfg.meta_step_size, cfg.discount)?);
                }
            }
        }
        let real_transitions_imaginary_phase = meter.count() - before_imaginary;
        if real_transitions_imaginary_phase != 0 {
            return Err(MetaError::Invariant(format!(
                "round {round}: imaginary phase consumed {real_transitions_imaginary_phase} real transitions"
            )));
        }
        imaginary_total += imaginary_round;
        let meta_updates = state.version - version_start;
        let expected_updates = cfg.real_transitions_per_task.div_ceil(cfg.meta_update_frequency)
            + if cfg.use_model { cfg.imaginary_transitions_per_task.div_ceil(cfg.meta_update_frequency) } else { 0 };
        if meta_updates != expected_updates as u64 {
            return Err(MetaError::Invariant(format!(
                "round {round}: {meta_updates} meta updates, expected {expected_updates}"
            )));
        }
        logs.push(RoundLog {
            round,
            tasks: runs.iter().map(|r| r.name.clone()).collect(),
            epsilon,
            buffer_sizes_at_start,
            real_transitions,
            real_transitions_imaginary_phase,
            imaginary_transitions: imaginary_round,
            meta_updates,
            theta_version: state.version,
            real_loss: mean(&real_losses),
            imaginary_loss: mean(&imaginary_losses),
            model_loss,
            travel_time_s,
        });
    }
    Ok(MetaTrainOutput {
        theta: state.into_theta(),
        ensemble,
        logs,
        real_transitions: meter.count() - start_count,
        imaginary_transitions: imaginary_total,
    })
}

fn train_models(
    ensemble: &mut ModelEnsemble,
    runs: &mut [TaskRun],
    cfg: &MetaConfig,
    losses: &mut Vec<f64>,
) -> Result<(), MetaError> {
    let training = cfg.model_training();
    let mut per_run: Vec<Vec<ModelSample>> = Vec::with_capacity(runs.len());
    for run in runs.iter_mut() {
        let member = run.member.ok_or_else(|| MetaError::MissingModel(run.name.clone()))?;
        let idx = run
            .buffer
            .sample_indices(cfg.model_training_samples, Some(TransitionKind::Real), &mut run.model_rng);
        per_run.push(ensemble.models[member].samples(&run.buffer, &idx, cfg.history_window)?);
    }
    if ensemble.shared {
        let pooled: Vec<ModelSample> = per_run.into_iter().flatten().collect();
        let report = ensemble.models[0].train(&pooled, &training, &mut runs[0].model_rng)?;
        losses.push(report.last());
    } else {
        let mut trained = Vec::new();
        for (run, samples) in runs.iter_mut().zip(per_run) {
            let member = run.member.expect("checked above");
            if trained.contains(&member) {
                // The same task drawn twice in a round: its model trains once
                // on the first draw's data.
                continue;
            }
            trained.push(member);
            let report = ensemble.models[member].train(&samples, &training, &mut run.model_rng)?;
            losses.push(report.last());
        }
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
