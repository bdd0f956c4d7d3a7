use std::collections::VecDeque;

use rand::Rng;

use super::{DynamicsError, DynamicsModel};
use crate::sim::{Observation, PhaseTable, Transition, TransitionKind};

/// Produces imaginary transitions one at a time as a sequence of short
/// rollouts. Each rollout starts from the observation of a transition drawn
/// uniformly from the real source data and runs for `rollout_len` steps.
#[derive(Debug, Clone)]
pub struct RolloutGenerator {
    rollout_len: usize,
    history_window: usize,
    steps_left: usize,
    current: Option<Observation>,
    history: VecDeque<(Observation, usize)>,
    rollouts_started: usize,
}

impl RolloutGenerator {
    pub fn new(rollout_len: usize, history_window: usize) -> Result<Self, DynamicsError> {
        if rollout_len == 0 {
            return Err(DynamicsError::InvalidRolloutLength);
        }
        Ok(RolloutGenerator {
            rollout_len,
            history_window: history_window.max(1),
            steps_left: 0,
            current: None,
            history: VecDeque::new(),
            rollouts_started: 0,
        })
    }

    pub fn rollouts_started(&self) -> usize {
        self.rollouts_started
    }

    /// Emits the next imaginary transition. `policy` maps an observation to
    /// an action index of `table`; `rng` only draws rollout starts.
    pub fn next<M, P, R>(
        &mut self,
        model: &M,
        source: &[Transition],
        table: &PhaseTable,
        mut policy: P,
        rng: &mut R,
    ) -> Result<Transition, DynamicsError>
    where
        M: DynamicsModel + ?Sized,
        P: FnMut(&Observation) -> usize,
        R: Rng + ?Sized,
    {
        if self.steps_left == 0 || self.current.is_none() {
            if source.is_empty() {
                return Err(DynamicsError::EmptySource);
            }
            let start = source[rng.gen_range(0..source.len())].obs;
            self.current = Some(start);
            self.steps_left = self.rollout_len;
            self.history.clear();
            self.rollouts_started += 1;
        }
        let obs = self.current.expect("rollout started");
        let action = policy(&obs);
        let primary = table.phase(action)?.id;
        self.history.push_back((obs, primary));
        while self.history.len() > self.history_window {
            self.history.pop_front();
        }
        let history: Vec<(Observation, usize)> = self.history.iter().copied().collect();
        let (next_obs, reward) = model.predict_history(&history)?;
        self.current = Some(next_obs);
        self.steps_left -= 1;
        Ok(Transition { obs, action, next_obs, reward, kind: TransitionKind::Imaginary })
    }
}

/// Generates exactly `total` imaginary transitions as `ceil(total / rollout_len)`
/// rollouts, the last one truncated.
#[allow(clippy::too_many_arguments)]
pub fn generate_imaginary_rollouts<M, P, R>(
    model: &M,
    mut policy: P,
    source: &[Transition],
    table: &PhaseTable,
    total: usize,
    rollout_len: usize,
    history_window: usize,
    rng: &mut R,
) -> Result<Vec<Transition>, DynamicsError>
where
    M: DynamicsModel + ?Sized,
    P: FnMut(&Observation) -> usize,
    R: Rng + ?Sized,
{
    if source.is_empty() {
        return Err(DynamicsError::EmptySource);
    }
    let mut generator = RolloutGenerator::new(rollout_len, history_window)?;
    (0..total)
        .map(|_| generator.next(model, source, table, &mut policy, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::IntersectionModel;
    use crate::sim::{build_phase_table, run_episode, FixedCycle, Scenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn real_data() -> (Vec<Transition>, PhaseTable) {
        let table = build_phase_table(&[0, 1, 2, 3]).unwrap();
        let s = Scenario::new("r", table.clone()).with_rates([0.5; 8]);
        let mut cycle = FixedCycle::new(2);
        let (ts, _) = run_episode(|_, t| cycle.next_action(t), &s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (ts, table)
    }

    fn starts(ts: &[Transition], rollout_len: usize) -> Vec<Observation> {
        ts.iter().step_by(rollout_len).map(|t| t.obs).collect()
    }

    #[test]
    fn short_rollouts_partition_the_budget() {
        let (source, table) = real_data();
        let model = IntersectionModel::new(0, &mut ChaCha8Rng::seed_from_u64(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut prng = ChaCha8Rng::seed_from_u64(4);
        let ts = generate_imaginary_rollouts(&model, |_| prng.gen_range(0..4), &source, &table, 360, 36, 1, &mut rng).unwrap();
        assert_eq!(ts.len(), 360);
        assert!(ts.iter().all(|t| t.kind == TransitionKind::Imaginary && t.action < 4));
        // Within a rollout each step continues from the previous prediction.
        for chunk in ts.chunks(36) {
            for w in chunk.windows(2) {
                assert_eq!(w[0].next_obs, w[1].obs);
            }
        }
        let starts = starts(&ts, 36);
        assert_eq!(starts.len(), 10);
        for s in starts {
            assert!(source.iter().any(|t| t.obs == s));
        }
    }

    #[test]
    fn full_length_rollout_is_a_single_trajectory() {
        let (source, table) = real_data();
        let model = IntersectionModel::new(0, &mut ChaCha8Rng::seed_from_u64(2));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = RolloutGenerator::new(360, 1).unwrap();
        for _ in 0..360 {
            g.next(&model, &source, &table, |_| 1, &mut rng).unwrap();
        }
        assert_eq!(g.rollouts_started(), 1);
    }

    #[test]
    fn truncates_last_rollout() {
        let (source, table) = real_data();
        let model = IntersectionModel::zeros(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = RolloutGenerator::new(36, 1).unwrap();
        for _ in 0..100 {
            g.next(&model, &source, &table, |_| 0, &mut rng).unwrap();
        }
        assert_eq!(g.rollouts_started(), 3);
    }

    #[test]
    fn errors() {
        let (_, table) = real_data();
        let model = IntersectionModel::zeros(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            generate_imaginary_rollouts(&model, |_| 0, &[], &table, 10, 5, 1, &mut rng),
            Err(DynamicsError::EmptySource)
        ));
        assert!(matches!(RolloutGenerator::new(0, 1), Err(DynamicsError::InvalidRolloutLength)));
        let (source, _) = real_data();
        assert!(generate_imaginary_rollouts(&model, |_| 7, &source, &table, 10, 5, 1, &mut rng).is_err());
    }
}
