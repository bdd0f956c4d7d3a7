//! Fixtures shared by the kernel benchmarks.

use modellight::dynamics::{IntersectionModel, ModelSample, TransitionSet};
use modellight::sim::{build_phase_table, run_episode, FixedCycle, Scenario, Transition};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn scenario() -> Scenario {
    Scenario::new("bench", build_phase_table(&[0, 1, 2, 3, 4, 5, 6, 7]).unwrap())
        .with_rates([0.8, 0.3, 0.8, 0.3, 0.6, 0.2, 0.6, 0.2])
}

/// One fixed-cycle episode of real transitions.
pub fn episode() -> Vec<Transition> {
    let s = scenario();
    let mut controller = FixedCycle::new(3);
    run_episode(|_, t| controller.next_action(t), &s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().0
}

pub fn transition_set() -> TransitionSet {
    let mut set = TransitionSet::new(scenario().phase_table);
    set.extend(episode());
    set
}

/// A fresh model and `n` training samples drawn from [`episode`].
pub fn model_and_samples(n: usize, history_window: usize) -> (IntersectionModel, Vec<ModelSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let set = transition_set();
    let model = IntersectionModel::new(0, &mut rng);
    let idx = set.sample_indices(n, None, &mut rng);
    let samples = model.samples(&set, &idx, history_window).unwrap();
    (model, samples)
}
