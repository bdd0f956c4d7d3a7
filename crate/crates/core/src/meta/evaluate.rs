use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MetaConfig, MetaError};
use crate::agent::{dqn_gradient_step, q_values, select_action, AgentError, PolicyParams, ReplayBatch, TargetNetwork};
use crate::dynamics::TransitionSet;
use crate::sim::{average_travel_time, EpisodeStats, Scenario, Simulator, TransitionKind, TransitionMeter};

/// Online DQN learner: acts in a simulator, keeps every transition and
/// takes one SGD step per environment step.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub params: PolicyParams,
    pub target: TargetNetwork,
    pub buffer: TransitionSet,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub reward_scale: f64,
    pub gradient_steps: usize,
}

impl DqnLearner {
    pub fn new(params: PolicyParams, scenario: &Scenario, cfg: &MetaConfig, learning_rate: f64) -> Self {
        DqnLearner {
            target: TargetNetwork::new(&params, cfg.target_update_frequency),
            params,
            buffer: TransitionSet::new(scenario.phase_table.clone()),
            learning_rate,
            batch_size: cfg.real_batch_size,
            gamma: cfg.discount,
            reward_scale: cfg.reward_scale,
            gradient_steps: 0,
        }
    }

    /// Plays one full episode from the initial state with ε-greedy actions.
    pub fn run_episode<R: Rng + ?Sized>(
        &mut self,
        sim: &mut Simulator<ChaCha8Rng>,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<EpisodeStats, MetaError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(AgentError::InvalidEpsilon(epsilon).into());
        }
        sim.reset();
        let table = sim.scenario().phase_table.clone();
        while !sim.is_done() {
            let q = q_values(&self.params, &sim.observe(), &table);
            let action = select_action(&q, epsilon, rng)?;
            let t = sim.step(action)?;
            self.buffer.push(t);
            let sample = self.buffer.sample(self.batch_size, Some(TransitionKind::Real), rng);
            let batch = ReplayBatch::new(sample)?.scaled(self.reward_scale);
            dqn_gradient_step(&mut self.params, &batch, &self.target.params, self.gamma, self.learning_rate, &table)?;
            self.gradient_steps += 1;
            self.target.record_update(&self.params);
        }
        Ok(sim.finish())
    }
}

/// One episode with fixed parameters and ε-greedy actions; no learning.
pub fn evaluate_policy<R: Rng + ?Sized>(
    params: &PolicyParams,
    sim: &mut Simulator<ChaCha8Rng>,
    epsilon: f64,
    rng: &mut R,
) -> Result<EpisodeStats, MetaError> {
    sim.reset();
    let table = sim.scenario().phase_table.clone();
    while !sim.is_done() {
        let q = q_values(params, &sim.observe(), &table);
        sim.step(select_action(&q, epsilon, rng)?)?;
    }
    Ok(sim.finish())
}

/// Independent random streams of an adaptation and evaluation run. Arrival
/// streams depend only on the seed, so every method sees the same traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSeeds {
    pub adaptation_arrivals: u64,
    pub evaluation_arrivals: u64,
    pub policy: u64,
}

impl EvalSeeds {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EvalSeeds { adaptation_arrivals: rng.gen(), evaluation_arrivals: rng.gen(), policy: rng.gen() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub travel_time_s: f64,
    pub epsilon: f64,
    pub parameter_updates: usize,
    pub vehicles: usize,
}

#[derive(Debug, Clone)]
pub struct MetaTestResult {
    pub adapted: PolicyParams,
    pub adaptation: EpisodeStats,
    pub adaptation_travel_time_s: f64,
    /// Travel time of every training episode, in order.
    pub learning_curve_s: Vec<f64>,
    pub adaptation_updates: usize,
    pub evaluation: EvaluationSummary,
    pub real_transitions: u64,
}

/// Adapts a copy of `theta` for one episode on `scenario` at the adaptation
/// step size, then evaluates it frozen for one episode.
pub fn meta_test(
    theta: &PolicyParams,
    scenario: &Scenario,
    cfg: &MetaConfig,
    seeds: EvalSeeds,
    meter: &TransitionMeter,
) -> Result<MetaTestResult, MetaError> {
    adapt_and_evaluate(theta, scenario, cfg, 1, cfg.adaptation_step_size, |_| cfg.adaptation_epsilon, seeds, meter)
}

/// Trains a copy of `params` for `episodes` episodes at `learning_rate` with
/// per-episode exploration `epsilon(e)`, then evaluates it frozen.
#[allow(clippy::too_many_arguments)]
pub fn adapt_and_evaluate(
    params: &PolicyParams,
    scenario: &Scenario,
    cfg: &MetaConfig,
    episodes: usize,
    learning_rate: f64,
    epsilon: impl Fn(usize) -> f64,
    seeds: EvalSeeds,
    meter: &TransitionMeter,
) -> Result<MetaTestResult, MetaError> {
    let start = meter.count();
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seeds.policy);
    let mut learner = DqnLearner::new(params.clone(), scenario, cfg, learning_rate);
    let mut train_sim =
        Simulator::new(scenario.clone(), ChaCha8Rng::seed_from_u64(seeds.adaptation_arrivals)).with_meter(meter.clone());
    let mut last = EpisodeStats::default();
    let mut curve = Vec::with_capacity(episodes);
    for e in 0..episodes {
        last = learner.run_episode(&mut train_sim, epsilon(e), &mut policy_rng)?;
        curve.push(average_travel_time(&last).seconds);
    }
    // Evaluation traffic is not part of the training budget and is not metered.
    let mut eval_sim = Simulator::new(scenario.clone(), ChaCha8Rng::seed_from_u64(seeds.evaluation_arrivals));
    let before = learner.params.clone();
    let stats = evaluate_policy(&learner.params, &mut eval_sim, cfg.evaluation_epsilon, &mut policy_rng)?;
    debug_assert_eq!(before, learner.params);
    let tt = average_travel_time(&stats);
    Ok(MetaTestResult {
        adapted: learner.params,
        adaptation_travel_time_s: curve.last().copied().unwrap_or(f64::NAN),
        learning_curve_s: curve,
        adaptation: last,
        adaptation_updates: learner.gradient_steps,
        evaluation: EvaluationSummary {
            travel_time_s: tt.seconds,
            epsilon: cfg.evaluation_epsilon,
            parameter_updates: 0,
            vehicles: tt.vehicles,
        },
        real_transitions: meter.count() - start,
    })
}
