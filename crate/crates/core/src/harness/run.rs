use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{load_scenarios, ExperimentConfig, Method};
use super::report::{summarize, write_curves, write_results, write_summary, write_timings, CurvePoint, ResultRow, SummaryRow};
use super::HarnessError;
use crate::agent::PolicyParams;
use crate::meta::{adapt_and_evaluate, meta_test, meta_train, EvalSeeds, MetaConfig, MetaTestResult, MetaTrainOutput, TaskPool};
use crate::sim::{average_travel_time, run_episode, EpisodeStats, FixedCycle, Scenario, TransitionMeter};

/// Exploration rate reported for the fixed-cycle baseline, which never explores.
pub const FIXED_CYCLE_EPSILON: f64 = 0.0;

const TRAINING_STREAM: u64 = 0x7261_696e;
const TRAINING_POOL_LABEL: &str = "training-pool";

/// Random initialization shared by every learning method at `seed`.
pub fn initial_params(seed: u64) -> PolicyParams {
    PolicyParams::new(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Arrival and policy streams for one (seed, test scenario) pair; identical
/// for every method.
pub fn evaluation_seeds(seed: u64, scenario_index: usize) -> EvalSeeds {
    EvalSeeds::from_seed(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ scenario_index as u64)
}

/// Real transitions a method may draw from the simulator for one result row
/// on a scenario with `horizon` steps per episode.
pub fn analytic_budget(method: Method, cfg: &ExperimentConfig, horizon: usize) -> u64 {
    match method.meta_config(&cfg.meta) {
        Some(meta) => meta.real_budget() + horizon as u64,
        None => match method {
            Method::DqnScratch => (cfg.dqn_scratch.episodes * horizon) as u64,
            _ => 0,
        },
    }
}

/// Meta-trains `method` from the seed's initialization.
pub fn train_meta_method(
    method: Method,
    pool: &TaskPool,
    base: &MetaConfig,
    seed: u64,
    meter: &TransitionMeter,
) -> Result<MetaTrainOutput, HarnessError> {
    let cfg = method
        .meta_config(base)
        .ok_or_else(|| HarnessError::Config(format!("method `{method}` has no meta-training stage")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRAINING_STREAM);
    Ok(meta_train(pool, &cfg, initial_params(seed), &mut rng, meter)?)
}

/// Runs the fixed-cycle controller on the evaluation traffic of `seeds`.
pub fn run_fixed_cycle(scenario: &Scenario, hold_steps: usize, seeds: EvalSeeds) -> Result<EpisodeStats, HarnessError> {
    let mut controller = FixedCycle::new(hold_steps);
    let mut arrivals = ChaCha8Rng::seed_from_u64(seeds.evaluation_arrivals);
    let (_, stats) = run_episode(|_, table| controller.next_action(table), scenario, &mut arrivals)?;
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub curves: Vec<CurvePoint>,
    pub summary: Vec<SummaryRow>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    pool: Option<TaskPool>,
    tests: Vec<Scenario>,
}

#[derive(Default)]
struct JobOutput {
    rows: Vec<ResultRow>,
    curves: Vec<CurvePoint>,
}

/// Runs every (method, seed) job, writes `results.csv`, `curves.csv`,
/// `summary.csv` and `timings.csv` to the output directory and returns their
/// contents. A failing run becomes a row with its error; the rest continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let tests = load_scenarios(&cfg.test_scenarios)?;
    let pool = if cfg.methods.iter().any(|m| m.is_meta()) {
        Some(TaskPool::new(load_scenarios(&cfg.training_pool)?)?)
    } else {
        None
    };
    let ctx = Context { cfg, pool, tests };
    let jobs: Vec<(Method, u64)> =
        cfg.methods.iter().flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s))).collect();
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let outputs: Vec<JobOutput> = threads.install(|| jobs.par_iter().map(|&(m, s)| run_job(&ctx, m, s)).collect());

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for out in outputs {
        rows.extend(out.rows);
        curves.extend(out.curves);
    }
    let summary = summarize(&rows);
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_results(dir.join("results.csv"), &rows)?;
    write_curves(dir.join("curves.csv"), &curves)?;
    write_summary(dir.join("summary.csv"), &summary)?;
    write_timings(dir.join("timings.csv"), &rows)?;
    write_text(&dir.join("experiment.json"), &cfg.to_json())?;
    Ok(ExperimentOutput { rows, curves, summary })
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn run_job(ctx: &Context, method: Method, seed: u64) -> JobOutput {
    match method {
        Method::FixedCycle => fixed_cycle_job(ctx, seed),
        Method::DqnScratch => scratch_job(ctx, seed),
        _ => meta_job(ctx, method, seed),
    }
}

struct Outcome {
    travel_time_s: f64,
    epsilon: f64,
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    ctx: &Context,
    method: Method,
    scenario: &Scenario,
    seed: u64,
    rounds_trained: usize,
    counted: u64,
    outcome: Result<Outcome, HarnessError>,
    wall_time_s: f64,
) -> ResultRow {
    let expected = analytic_budget(method, ctx.cfg, scenario.horizon_steps);
    let outcome = outcome.and_then(|o| {
        if counted == expected {
            Ok(o)
        } else {
            Err(HarnessError::Audit {
                method: method.to_string(),
                scenario: scenario.name.clone(),
                seed,
                counted,
                expected,
            })
        }
    });
    let (travel, eps, error) = match outcome {
        Ok(o) => (o.travel_time_s, o.epsilon, None),
        Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
    };
    ResultRow {
        method,
        scenario: scenario.name.clone(),
        seed,
        rounds_trained,
        real_transitions_used: counted,
        avg_travel_time_s: travel,
        final_epsilon: eps,
        wall_time_s,
        error,
    }
}

fn curve<'a>(
    method: Method,
    scenario: &str,
    seed: u64,
    stage: &str,
    values: &'a [f64],
) -> impl Iterator<Item = CurvePoint> + 'a {
    let scenario = scenario.to_string();
    let stage = stage.to_string();
    values.iter().copied().enumerate().map(move |(episode, travel_time_s)| CurvePoint {
        method,
        scenario: scenario.clone(),
        seed,
        stage: stage.clone(),
        episode,
        travel_time_s,
    })
}

fn adaptation_points(method: Method, scenario: &str, seed: u64, stage: &str, r: &MetaTestResult) -> Vec<CurvePoint> {
    curve(method, scenario, seed, stage, &r.learning_curve_s)
        .chain(curve(method, scenario, seed, "eval", &[r.evaluation.travel_time_s]))
        .collect()
}

fn fixed_cycle_job(ctx: &Context, seed: u64) -> JobOutput {
    let mut out = JobOutput::default();
    for (i, scenario) in ctx.tests.iter().enumerate() {
        let start = Instant::now();
        let result = run_fixed_cycle(scenario, ctx.cfg.fixed_cycle.hold_steps, evaluation_seeds(seed, i)).map(|stats| {
            let tt = average_travel_time(&stats).seconds;
            out.curves.extend(curve(Method::FixedCycle, &scenario.name, seed, "eval", &[tt]));
            Outcome { travel_time_s: tt, epsilon: FIXED_CYCLE_EPSILON }
        });
        let wall = start.elapsed().as_secs_f64();
        out.rows.push(make_row(ctx, Method::FixedCycle, scenario, seed, 0, 0, result, wall));
    }
    out
}

fn scratch_job(ctx: &Context, seed: u64) -> JobOutput {
    let mut out = JobOutput::default();
    let cfg = ctx.cfg;
    let schedule = cfg.meta.epsilon_schedule();
    for (i, scenario) in ctx.tests.iter().enumerate() {
        let start = Instant::now();
        let meter = TransitionMeter::new();
        let result = adapt_and_evaluate(
            &initial_params(seed),
            scenario,
            &cfg.meta,
            cfg.dqn_scratch.episodes,
            cfg.dqn_scratch.learning_rate,
            |e| schedule.value(e),
            evaluation_seeds(seed, i),
            &meter,
        )
        .map_err(HarnessError::from)
        .map(|r| {
            out.curves.extend(adaptation_points(Method::DqnScratch, &scenario.name, seed, "train", &r));
            Outcome { travel_time_s: r.evaluation.travel_time_s, epsilon: r.evaluation.epsilon }
        });
        let wall = start.elapsed().as_secs_f64();
        out.rows.push(make_row(ctx, Method::DqnScratch, scenario, seed, 0, meter.count(), result, wall));
    }
    out
}

fn meta_job(ctx: &Context, method: Method, seed: u64) -> JobOutput {
    let mut out = JobOutput::default();
    let meta_cfg = method.meta_config(&ctx.cfg.meta).expect("meta method");
    let pool = ctx.pool.as_ref().expect("pool loaded for meta methods");
    let start = Instant::now();
    let train_meter = TransitionMeter::new();
    let trained = train_meta_method(method, pool, &ctx.cfg.meta, seed, &train_meter).and_then(|o| {
        let counted = train_meter.count();
        if counted == meta_cfg.real_budget() {
            Ok(o)
        } else {
            Err(HarnessError::Audit {
                method: method.to_string(),
                scenario: TRAINING_POOL_LABEL.into(),
                seed,
                counted,
                expected: meta_cfg.real_budget(),
            })
        }
    });
    let train_time = start.elapsed().as_secs_f64();
    let trained = match trained {
        Ok(t) => t,
        Err(e) => {
            let msg = e.to_string();
            for scenario in &ctx.tests {
                let err = Err(HarnessError::Config(msg.clone()));
                out.rows.push(make_row(ctx, method, scenario, seed, 0, train_meter.count(), err, train_time));
            }
            return out;
        }
    };
    let round_curve: Vec<f64> = trained
        .logs
        .iter()
        .map(|log| log.travel_time_s.iter().sum::<f64>() / log.travel_time_s.len().max(1) as f64)
        .collect();
    out.curves.extend(curve(method, TRAINING_POOL_LABEL, seed, "meta-train", &round_curve));
    for (i, scenario) in ctx.tests.iter().enumerate() {
        let start = Instant::now();
        let meter = TransitionMeter::new();
        let result = meta_test(&trained.theta, scenario, &meta_cfg, evaluation_seeds(seed, i), &meter)
            .map_err(HarnessError::from)
            .map(|r| {
                out.curves.extend(adaptation_points(method, &scenario.name, seed, "adapt", &r));
                Outcome { travel_time_s: r.evaluation.travel_time_s, epsilon: r.evaluation.epsilon }
            });
        let wall = train_time + start.elapsed().as_secs_f64();
        let counted = train_meter.count() + meter.count();
        out.rows.push(make_row(ctx, method, scenario, seed, meta_cfg.meta_training_rounds, counted, result, wall));
    }
    out
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::agent::networks_constructed;
    use crate::harness::{read_results, DqnScratchConfig};
    use crate::sim::{build_phase_table, Movement};

    fn scenario(name: &str, phases: &[usize], rates: [f64; 8], horizon: usize) -> Scenario {
        let mut s = Scenario::new(name, build_phase_table(phases).unwrap());
        s.horizon_steps = horizon;
        for (m, r) in Movement::ALL.iter().zip(rates) {
            s.set_rate(*m, 0, r);
        }
        s
    }

    fn write(dir: &Path, s: &Scenario) -> PathBuf {
        let path = dir.join(format!("{}.json", s.name));
        std::fs::write(&path, s.to_json()).unwrap();
        path
    }

    fn tiny_meta() -> MetaConfig {
        MetaConfig {
            meta_training_rounds: 1,
            real_transitions_per_task: 20,
            imaginary_transitions_per_task: 20,
            meta_update_frequency: 10,
            model_training_samples: 16,
            lstm_training_epochs: 2,
            rollout_length: 10,
            ..MetaConfig::default()
        }
    }

    fn setup(dir: &Path, methods: Vec<Method>, seeds: Vec<u64>) -> ExperimentConfig {
        let pool_dir = dir.join("pool");
        let test_dir = dir.join("test");
        std::fs::create_dir_all(&pool_dir).unwrap();
        std::fs::create_dir_all(&test_dir).unwrap();
        write(&pool_dir, &scenario("p4", &[0, 1, 2, 3], [0.8, 0.2, 0.8, 0.2, 0.3, 0.1, 0.3, 0.1], 30));
        write(&pool_dir, &scenario("p8", &[0, 1, 2, 3, 4, 5, 6, 7], [0.3, 0.2, 0.3, 0.2, 0.9, 0.1, 0.9, 0.1], 30));
        let t1 = write(&test_dir, &scenario("t6", &[0, 1, 2, 3, 4, 5], [0.5; 8], 40));
        let t2 = write(&test_dir, &scenario("t4", &[0, 1, 2, 3], [0.6, 0.1, 0.6, 0.1, 0.2, 0.2, 0.2, 0.2], 25));
        ExperimentConfig {
            methods,
            training_pool: vec![pool_dir],
            test_scenarios: vec![t1, t2],
            seeds,
            output_dir: dir.join("out"),
            meta: tiny_meta(),
            dqn_scratch: DqnScratchConfig { episodes: 2, learning_rate: 0.001 },
            fixed_cycle: Default::default(),
            workers: Some(2),
        }
    }

    #[test]
    fn every_method_runs_and_passes_the_audit() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), Method::ALL.to_vec(), vec![0, 1]);
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), Method::ALL.len() * 2 * 2);
        for r in &out.rows {
            assert!(r.is_ok(), "{r:?}");
            let horizon = if r.scenario == "t6" { 40 } else { 25 };
            let expected = match r.method {
                Method::FixedCycle => 0,
                Method::DqnScratch => 2 * horizon,
                _ => 2 * 20 + horizon,
            };
            assert_eq!(r.real_transitions_used, expected, "{r:?}");
            assert_eq!(r.real_transitions_used, analytic_budget(r.method, &cfg, horizon as usize));
            assert!(r.avg_travel_time_s.is_finite());
            let rounds = if r.method.is_meta() { 1 } else { 0 };
            assert_eq!(r.rounds_trained, rounds);
        }
        assert_eq!(out.summary.len(), Method::ALL.len() * 2);
        assert!(out.summary.iter().all(|s| s.runs == 2 && s.failed == 0));
        for f in ["results.csv", "curves.csv", "summary.csv", "timings.csv", "experiment.json"] {
            assert!(cfg.output_dir.join(f).exists(), "{f}");
        }
        assert_eq!(read_results(cfg.output_dir.join("results.csv")).unwrap().len(), out.rows.len());
        let adapt = out.curves.iter().filter(|c| c.method == Method::ModelLight && c.stage == "adapt").count();
        assert_eq!(adapt, 2 * 2);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path(), vec![Method::ModelLight, Method::DqnScratch, Method::FixedCycle], vec![4]);
        run_experiment(&cfg).unwrap();
        let first = cfg.output_dir.clone();
        cfg.output_dir = dir.path().join("again");
        cfg.workers = Some(1);
        run_experiment(&cfg).unwrap();
        for f in ["results.csv", "curves.csv", "summary.csv"] {
            let a = std::fs::read(first.join(f)).unwrap();
            let b = std::fs::read(cfg.output_dir.join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn ten_rounds_use_a_tenth_of_the_hundred_round_budget() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path(), vec![Method::MetaLightLike], vec![0]);
        let pool = TaskPool::new(load_scenarios(&cfg.training_pool).unwrap()).unwrap();
        let mut counts = Vec::new();
        for rounds in [10, 100] {
            cfg.meta.meta_training_rounds = rounds;
            let meter = TransitionMeter::new();
            train_meta_method(Method::MetaLightLike, &pool, &cfg.meta, 0, &meter).unwrap();
            assert_eq!(meter.count(), Method::MetaLightLike.meta_config(&cfg.meta).unwrap().real_budget());
            counts.push(meter.count());
        }
        assert_eq!(counts[0] * 10, counts[1]);
    }

    #[test]
    fn fixed_cycle_builds_no_network() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), vec![Method::FixedCycle], vec![0, 1]);
        let ctx = Context { cfg: &cfg, pool: None, tests: load_scenarios(&cfg.test_scenarios).unwrap() };
        let before = networks_constructed();
        let out = fixed_cycle_job(&ctx, 0);
        assert_eq!(networks_constructed(), before);
        assert!(out.rows.iter().all(|r| r.is_ok() && r.real_transitions_used == 0));
        assert!(out.rows.iter().all(|r| r.final_epsilon == FIXED_CYCLE_EPSILON));
        // sanity: the counter does see constructions on this thread
        let _ = initial_params(0);
        assert_eq!(networks_constructed(), before + 1);
    }

    #[test]
    fn audit_mismatch_fails_only_that_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), vec![Method::DqnScratch], vec![0]);
        let ctx = Context { cfg: &cfg, pool: None, tests: load_scenarios(&cfg.test_scenarios).unwrap() };
        let ok = || Ok(Outcome { travel_time_s: 10.0, epsilon: 0.2 });
        let good = make_row(&ctx, Method::DqnScratch, &ctx.tests[0], 0, 0, 80, ok(), 0.0);
        assert!(good.is_ok());
        let bad = make_row(&ctx, Method::DqnScratch, &ctx.tests[0], 0, 0, 79, ok(), 0.0);
        assert!(bad.error.unwrap().contains("audit"));
        assert!(bad.avg_travel_time_s.is_nan());
    }

    #[test]
    fn training_failure_becomes_error_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), vec![Method::MetaLightLike], vec![0]);
        let mut broken = cfg.clone();
        broken.meta.real_batch_size = 0;
        let tests = load_scenarios(&cfg.test_scenarios).unwrap();
        let pool = Some(TaskPool::new(load_scenarios(&cfg.training_pool).unwrap()).unwrap());
        let ctx = Context { cfg: &broken, pool, tests };
        let out = meta_job(&ctx, Method::MetaLightLike, 0);
        assert_eq!(out.rows.len(), 2);
        assert!(out.rows.iter().all(|r| r.error.is_some()));
    }

    #[test]
    fn methods_share_initialization_and_traffic() {
        assert_eq!(initial_params(7), initial_params(7));
        assert_ne!(initial_params(7), initial_params(8));
        assert_eq!(evaluation_seeds(3, 1), evaluation_seeds(3, 1));
        assert_ne!(evaluation_seeds(3, 0), evaluation_seeds(3, 1));
    }
}
