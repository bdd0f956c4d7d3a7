use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{backprop_q, trace};
use super::{q_values, AgentError, PolicyParams};
use crate::nn::{sgd_update, zeros_like, Checkpoint, NnError, Parameters};
use crate::sim::{Observation, PhaseTable, Transition, TransitionKind};

/// ε-greedy over `q`: uniform with probability `epsilon`, otherwise the
/// first maximal index.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> Result<usize, AgentError> {
    if q.is_empty() {
        return Err(AgentError::EmptyQ);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(AgentError::InvalidEpsilon(epsilon));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..q.len()));
    }
    Ok(argmax(q))
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// Greedy action of `params` in `obs`.
pub fn greedy_action(params: &PolicyParams, obs: &Observation, table: &PhaseTable) -> usize {
    argmax(&q_values(params, obs, table))
}

/// Multiplicative per-episode decay clamped to `[minimum, initial]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub minimum: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { initial: 0.8, minimum: 0.2, decay: 0.95 }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize) -> f64 {
        let e = self.initial * self.decay.powi(episode.min(i32::MAX as usize) as i32);
        e.clamp(self.minimum, self.initial)
    }
}

/// Transitions of one task and one kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBatch {
    transitions: Vec<Transition>,
    kind: TransitionKind,
}

impl ReplayBatch {
    pub fn new(transitions: Vec<Transition>) -> Result<Self, AgentError> {
        let kind = transitions.first().ok_or(AgentError::EmptyBatch)?.kind;
        if transitions.iter().any(|t| t.kind != kind) {
            return Err(AgentError::MixedBatch);
        }
        Ok(ReplayBatch { transitions, kind })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn kind(&self) -> TransitionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Copy with every reward multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> ReplayBatch {
        let transitions = self
            .transitions
            .iter()
            .map(|t| Transition { reward: t.reward * factor, ..*t })
            .collect();
        ReplayBatch { transitions, kind: self.kind }
    }
}

/// `r + gamma * max_a' Q(s', a'; target)` for each transition.
pub fn bellman_targets(batch: &ReplayBatch, target: &PolicyParams, gamma: f64, table: &PhaseTable) -> Vec<f64> {
    batch
        .transitions
        .iter()
        .map(|t| {
            let next = q_values(target, &t.next_obs, table);
            t.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Mean squared TD error of `params` on `batch` and its gradient; the
/// target network only enters through the fixed Bellman targets.
pub fn dqn_loss_and_gradient(
    params: &PolicyParams,
    batch: &ReplayBatch,
    target: &PolicyParams,
    gamma: f64,
    table: &PhaseTable,
) -> Result<(f64, PolicyParams), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let targets = bellman_targets(batch, target, gamma, table);
    let n = batch.len() as f64;
    let mut grads = zeros_like(params);
    let mut loss = 0.0;
    for (t, y) in batch.transitions.iter().zip(targets) {
        let tr = trace(params, &t.obs, table);
        let q = *tr.q.get(t.action).ok_or(AgentError::Sim(crate::sim::SimError::InvalidAction {
            action: t.action,
            phases: table.len(),
        }))?;
        let td = q - y;
        loss += td * td / n;
        backprop_q(params, &tr, table, t.action, 2.0 * td / n, &mut grads)?;
    }
    if !loss.is_finite() || !grads.all_finite() {
        return Err(AgentError::Nn(NnError::NonFinite("dqn loss")));
    }
    Ok((loss, grads))
}

/// One SGD step on the squared TD error; returns the loss before the step.
pub fn dqn_gradient_step(
    params: &mut PolicyParams,
    batch: &ReplayBatch,
    target: &PolicyParams,
    gamma: f64,
    lr: f64,
    table: &PhaseTable,
) -> Result<f64, AgentError> {
    let (loss, grads) = dqn_loss_and_gradient(params, batch, target, gamma, table)?;
    if lr != 0.0 {
        sgd_update(params, &grads, lr)?;
    }
    Ok(loss)
}

/// Independent copy used as the target network.
pub fn sync_target(params: &PolicyParams) -> PolicyParams {
    params.clone()
}

/// Target network re-synchronized after every `period` recorded updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork {
    pub params: PolicyParams,
    period: usize,
    updates: usize,
}

impl TargetNetwork {
    pub fn new(online: &PolicyParams, period: usize) -> Self {
        TargetNetwork { params: sync_target(online), period: period.max(1), updates: 0 }
    }

    pub fn is_sync_point(counter: usize, period: usize) -> bool {
        counter > 0 && counter.is_multiple_of(period.max(1))
    }

    /// Counts one update of `online`; syncs and returns true on a sync point.
    pub fn record_update(&mut self, online: &PolicyParams) -> bool {
        self.updates += 1;
        if Self::is_sync_point(self.updates, self.period) {
            self.params = sync_target(online);
            true
        } else {
            false
        }
    }

    pub fn updates(&self) -> usize {
        self.updates
    }
}

pub fn save_policy(params: &PolicyParams, path: impl AsRef<std::path::Path>) -> Result<(), AgentError> {
    Checkpoint::from_params("policy", params).save(path)?;
    Ok(())
}

pub fn load_policy(path: impl AsRef<std::path::Path>) -> Result<PolicyParams, AgentError> {
    let mut params = PolicyParams::zeros();
    Checkpoint::load(path)?.load_params("policy", &mut params)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_gradient, relative_error};
    use crate::sim::build_phase_table;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table4() -> PhaseTable {
        build_phase_table(&[0, 1, 2, 3]).unwrap()
    }

    fn random_transition(rng: &mut ChaCha8Rng, phases: usize) -> Transition {
        let obs = Observation::new(std::array::from_fn(|_| rng.gen_range(0..25) as f64), rng.gen_range(0..4));
        let action = rng.gen_range(0..phases);
        let next = Observation::new(std::array::from_fn(|_| rng.gen_range(0..25) as f64), action);
        Transition { obs, action, next_obs: next, reward: -next.queue_sum(), kind: TransitionKind::Real }
    }

    #[test]
    fn argmax_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[1.0, 3.0, 2.0], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&[5.0, 5.0], 0.0, &mut rng).unwrap(), 0);
        assert!(matches!(select_action(&[], 0.0, &mut rng), Err(AgentError::EmptyQ)));
        assert!(matches!(select_action(&[1.0], 1.5, &mut rng), Err(AgentError::InvalidEpsilon(_))));
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[select_action(&[0.0, 9.0, 1.0], 1.0, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn epsilon_stays_in_bounds(episode in 0usize..100_000, decay in 0.0f64..=1.0) {
            let s = EpsilonSchedule { decay, ..EpsilonSchedule::default() };
            let e = s.value(episode);
            prop_assert!((0.2..=0.8).contains(&e));
            prop_assert!(s.value(episode + 1) <= e);
        }
    }

    #[test]
    fn epsilon_schedule_values() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0), 0.8);
        assert!((s.value(1) - 0.76).abs() < 1e-12);
        assert_eq!(s.value(1000), 0.2);
    }

    #[test]
    fn bellman_arithmetic() {
        let table = table4();
        let mut target = PolicyParams::zeros();
        target.scorer.bias[0] = 10.0;
        let t = Transition {
            obs: Observation::new([0.0; 8], 0),
            action: 0,
            next_obs: Observation::new([1.0; 8], 1),
            reward: -4.0,
            kind: TransitionKind::Real,
        };
        let batch = ReplayBatch::new(vec![t]).unwrap();
        assert_eq!(bellman_targets(&batch, &target, 0.8, &table), vec![4.0]);
        assert_eq!(bellman_targets(&batch, &target, 0.0, &table), vec![-4.0]);
    }

    #[test]
    fn gamma_zero_targets_are_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = PolicyParams::new(&mut rng);
        let ts: Vec<Transition> = (0..20).map(|_| random_transition(&mut rng, 4)).collect();
        let batch = ReplayBatch::new(ts.clone()).unwrap();
        let y = bellman_targets(&batch, &target, 0.0, &table4());
        assert_eq!(y, ts.iter().map(|t| t.reward).collect::<Vec<_>>());
    }

    #[test]
    fn batches_must_be_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_transition(&mut rng, 4);
        let b = Transition { kind: TransitionKind::Imaginary, ..random_transition(&mut rng, 4) };
        assert!(matches!(ReplayBatch::new(vec![a, b]), Err(AgentError::MixedBatch)));
        assert!(matches!(ReplayBatch::new(vec![]), Err(AgentError::EmptyBatch)));
        let s = ReplayBatch::new(vec![a]).unwrap().scaled(0.5);
        assert_eq!(s.transitions()[0].reward, a.reward * 0.5);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = PolicyParams::new(&mut rng);
        let before = p.clone();
        let batch = ReplayBatch::new((0..8).map(|_| random_transition(&mut rng, 4)).collect()).unwrap();
        let loss = dqn_gradient_step(&mut p, &batch, &before, 0.9, 0.0, &table4()).unwrap();
        assert_eq!(p, before);
        assert!(loss > 0.0);
    }

    #[test]
    fn regresses_single_transition_to_its_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = PolicyParams::new(&mut rng);
        let target = p.clone();
        let table = table4();
        let t = Transition { reward: -1.5, ..random_transition(&mut rng, 4) };
        let batch = ReplayBatch::new(vec![t]).unwrap();
        let mut steps = 0;
        while (q_values(&p, &t.obs, &table)[t.action] - t.reward).abs() >= 1e-2 {
            dqn_gradient_step(&mut p, &batch, &target, 0.0, 0.01, &table).unwrap();
            steps += 1;
            assert!(steps <= 5000, "did not converge");
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let table = build_phase_table(&[0, 1, 4, 5, 6, 7]).unwrap();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PolicyParams::new(&mut rng);
            let target = PolicyParams::new(&mut rng);
            let batch = ReplayBatch::new((0..6).map(|_| random_transition(&mut rng, 6)).collect()).unwrap();
            let (_, g) = dqn_loss_and_gradient(&p, &batch, &target, 0.9, &table).unwrap();
            let fd = finite_difference_gradient(&p, |pp| dqn_loss_and_gradient(pp, &batch, &target, 0.9, &table).unwrap().0, 1e-6);
            let err = relative_error(&g.to_flat(), &fd);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn target_is_an_isolated_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table = table4();
        let mut p = PolicyParams::new(&mut rng);
        let target = sync_target(&p);
        let states: Vec<Observation> = (0..10).map(|_| random_transition(&mut rng, 4).obs).collect();
        for s in &states {
            assert_eq!(q_values(&p, s, &table), q_values(&target, s, &table));
        }
        let batch = ReplayBatch::new((0..8).map(|_| random_transition(&mut rng, 4)).collect()).unwrap();
        let before: Vec<Vec<f64>> = states.iter().map(|s| q_values(&target, s, &table)).collect();
        let y0 = bellman_targets(&batch, &target, 0.9, &table);
        dqn_gradient_step(&mut p, &batch, &target, 0.9, 0.05, &table).unwrap();
        let after: Vec<Vec<f64>> = states.iter().map(|s| q_values(&target, s, &table)).collect();
        assert_eq!(before, after);
        assert_eq!(y0, bellman_targets(&batch, &target, 0.9, &table));
    }

    #[test]
    fn sync_every_fifth_update() {
        assert!(!TargetNetwork::is_sync_point(4, 5));
        assert!(TargetNetwork::is_sync_point(5, 5));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = PolicyParams::new(&mut rng);
        let mut target = TargetNetwork::new(&p, 5);
        let mut synced = vec![];
        for _ in 0..10 {
            p.scorer.bias[0] += 1.0;
            synced.push(target.record_update(&p));
        }
        assert_eq!(synced, [false, false, false, false, true, false, false, false, false, true]);
        assert_eq!(target.params, p);
    }

    #[test]
    fn policy_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = PolicyParams::new(&mut ChaCha8Rng::seed_from_u64(9));
        let path = dir.path().join("policy.params");
        save_policy(&p, &path).unwrap();
        assert_eq!(load_policy(&path).unwrap(), p);
    }
}
