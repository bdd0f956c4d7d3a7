use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use modellight::agent::{dqn_gradient_step, q_values, PolicyParams, ReplayBatch};
use modellight::dynamics::{DynamicsModel, ModelTrainingConfig};
use modellight::sim::{Simulator, TransitionKind};
use modellight_bench::{episode, model_and_samples, scenario, transition_set};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simulator(c: &mut Criterion) {
    c.bench_function("sim/episode_360_steps", |b| {
        let s = scenario();
        let phases = s.phase_table.len();
        let mut policy = ChaCha8Rng::seed_from_u64(0);
        b.iter(|| {
            let mut sim = Simulator::new(s.clone(), ChaCha8Rng::seed_from_u64(3));
            while !sim.is_done() {
                black_box(sim.step(policy.gen_range(0..phases)).unwrap());
            }
        })
    });
}

fn policy(c: &mut Criterion) {
    let table = scenario().phase_table;
    let params = PolicyParams::new(&mut ChaCha8Rng::seed_from_u64(4));
    let data = episode();
    c.bench_function("agent/q_values", |b| b.iter(|| black_box(q_values(&params, &data[100].obs, &table))));

    let set = transition_set();
    let target = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    c.bench_function("agent/dqn_step_batch_30", |b| {
        b.iter_batched(
            || ReplayBatch::new(set.sample(30, Some(TransitionKind::Real), &mut rng)).unwrap().scaled(0.01),
            |batch| {
                let mut p = params.clone();
                dqn_gradient_step(&mut p, &batch, &target, 0.9, 0.001, &table).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn dynamics(c: &mut Criterion) {
    let (model, samples) = model_and_samples(32, 2);
    c.bench_function("model/forward_backward_batch_32", |b| {
        b.iter(|| black_box(model.loss_and_gradient(&samples).unwrap()))
    });
    let obs = episode()[50].obs;
    c.bench_function("model/predict", |b| b.iter(|| black_box(model.predict(&obs, 1).unwrap())));

    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    let (model, samples) = model_and_samples(300, 2);
    let cfg = ModelTrainingConfig { epochs: 5, ..Default::default() };
    group.bench_function("train_300_samples_5_epochs", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| m.train(&samples, &cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, simulator, policy, dynamics);
criterion_main!(benches);
