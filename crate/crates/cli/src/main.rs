use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use modellight::agent::{load_policy, save_policy, PolicyParams};
use modellight::harness::{
    compare_methods, evaluation_seeds, load_scenarios, read_results, run_experiment, run_fixed_cycle,
    train_meta_method, write_round_logs, ExperimentConfig, Method, ResultRow, FIXED_CYCLE_EPSILON,
};
use modellight::meta::{evaluate_policy, meta_test, TaskPool};
use modellight::sim::{average_travel_time, Scenario, Simulator, TransitionMeter};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "modellight", version, about = "Meta-learned traffic signal control on a queue simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a policy initialization on the config's training pool.
    MetaTrain(MetaTrainArgs),
    /// Adapt a policy for one episode on each test scenario, then evaluate it frozen.
    Adapt(AdaptArgs),
    /// Evaluate a frozen policy or the fixed-cycle controller.
    Eval(EvalArgs),
    /// Run every configured method over all seeds and test scenarios.
    Experiment(ExperimentArgs),
    /// Compare methods from one or more results files.
    Compare(CompareArgs),
}

/// Comma-separated list of seeds, e.g. `3` or `0,1,2`.
#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let seeds = s
            .split(',')
            .map(|p| p.trim().parse::<u64>().map_err(|e| format!("bad seed `{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Seeds(seeds))
    }
}

/// Comma-separated method names.
#[derive(Debug, Clone)]
struct Methods(Vec<Method>);

impl FromStr for Methods {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',').map(|m| m.trim().parse::<Method>().map_err(|e| e.to_string())).collect::<Result<_, _>>().map(Methods)
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seed or comma-separated seeds; overrides the config.
    #[arg(long)]
    seed: Option<Seeds>,
    /// Meta-training rounds; overrides the config.
    #[arg(long)]
    rounds: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seeds) = &self.seed {
            cfg.seeds = seeds.0.clone();
        }
        if let Some(rounds) = self.rounds {
            cfg.meta.meta_training_rounds = rounds;
        }
        if cfg.seeds.is_empty() {
            bail!("no seeds given in the config or with --seed");
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct MetaTrainArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long, default_value = "modellight")]
    method: Method,
    /// Output directory; one `seed-<n>` subdirectory per seed.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Policy parameters to adapt.
    #[arg(long)]
    policy: PathBuf,
    /// Scenario files to adapt on; defaults to the config's test scenarios.
    #[arg(long)]
    scenario: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Frozen policy to evaluate; required unless the method is fixed-cycle.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// `fixed-cycle`, or any learning method to evaluate `--policy`.
    #[arg(long, default_value = "modellight")]
    method: Method,
    #[arg(long)]
    scenario: Vec<PathBuf>,
    /// Writes `eval.csv` here when given.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Methods to run; overrides the config.
    #[arg(long)]
    method: Option<Methods>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// `results.csv` files or directories containing one.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// Method compared against the best of the others.
    #[arg(long, default_value = "modellight")]
    method: Method,
    /// Writes `comparison.csv` here when given.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AdaptRecord<'a> {
    scenario: &'a str,
    seed: u64,
    adaptation_travel_time_s: f64,
    evaluation_travel_time_s: f64,
    evaluation_epsilon: f64,
    parameter_updates: usize,
    real_transitions: u64,
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    method: Method,
    scenario: &'a str,
    seed: u64,
    travel_time_s: f64,
    epsilon: f64,
    vehicles: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MetaTrain(a) => meta_train_cmd(a),
        Command::Adapt(a) => adapt_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn scenarios(cfg: &ExperimentConfig, explicit: &[PathBuf]) -> Result<Vec<Scenario>> {
    let paths = if explicit.is_empty() { &cfg.test_scenarios } else { explicit };
    if paths.is_empty() {
        bail!("no scenarios given in the config or with --scenario");
    }
    Ok(load_scenarios(paths)?)
}

fn meta_train_cmd(args: MetaTrainArgs) -> Result<ExitCode> {
    let cfg = args.common.load()?;
    let Some(meta_cfg) = args.method.meta_config(&cfg.meta) else {
        bail!("method `{}` has no meta-training stage", args.method);
    };
    meta_cfg.validate()?;
    let pool = TaskPool::new(load_scenarios(&cfg.training_pool)?)?;
    for &seed in &cfg.seeds {
        let dir = args.out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        let meter = TransitionMeter::new();
        let out = train_meta_method(args.method, &pool, &cfg.meta, seed, &meter)?;
        save_policy(&out.theta, dir.join("policy.params"))?;
        if let Some(ensemble) = &out.ensemble {
            ensemble.save(dir.join("models"))?;
        }
        write_round_logs(dir.join("rounds.csv"), &out.logs)?;
        std::fs::write(dir.join("meta_config.json"), meta_cfg.to_json())?;
        println!(
            "seed {seed}: {} rounds, {} real and {} imaginary transitions -> {}",
            meta_cfg.meta_training_rounds,
            meter.count(),
            out.imaginary_transitions,
            dir.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn adapt_cmd(args: AdaptArgs) -> Result<ExitCode> {
    let cfg = args.common.load()?;
    cfg.meta.validate()?;
    let theta = load_policy(&args.policy)?;
    let tests = scenarios(&cfg, &args.scenario)?;
    create_dir(&args.out)?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        for (i, scenario) in tests.iter().enumerate() {
            let meter = TransitionMeter::new();
            let r = meta_test(&theta, scenario, &cfg.meta, evaluation_seeds(seed, i), &meter)?;
            save_policy(&r.adapted, args.out.join(format!("{}-seed-{seed}.params", scenario.name)))?;
            println!(
                "{} seed {seed}: adaptation {:.2} s, evaluation {:.2} s",
                scenario.name, r.adaptation_travel_time_s, r.evaluation.travel_time_s
            );
            records.push(AdaptRecord {
                scenario: &scenario.name,
                seed,
                adaptation_travel_time_s: r.adaptation_travel_time_s,
                evaluation_travel_time_s: r.evaluation.travel_time_s,
                evaluation_epsilon: r.evaluation.epsilon,
                parameter_updates: r.adaptation_updates,
                real_transitions: r.real_transitions,
            });
        }
    }
    write_csv(&args.out.join("adapt.csv"), &records)?;
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(args: EvalArgs) -> Result<ExitCode> {
    let cfg = args.common.load()?;
    let policy: Option<PolicyParams> = match (args.method, &args.policy) {
        (Method::FixedCycle, None) => None,
        (Method::FixedCycle, Some(_)) => bail!("fixed-cycle takes no --policy"),
        (_, Some(p)) => Some(load_policy(p)?),
        (m, None) => bail!("evaluating `{m}` needs --policy"),
    };
    let tests = scenarios(&cfg, &args.scenario)?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        for (i, scenario) in tests.iter().enumerate() {
            let seeds = evaluation_seeds(seed, i);
            let (stats, epsilon) = match &policy {
                None => (run_fixed_cycle(scenario, cfg.fixed_cycle.hold_steps, seeds)?, FIXED_CYCLE_EPSILON),
                Some(params) => {
                    let arrivals = ChaCha8Rng::seed_from_u64(seeds.evaluation_arrivals);
                    let mut sim = Simulator::new(scenario.clone(), arrivals);
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds.policy);
                    let eps = cfg.meta.evaluation_epsilon;
                    (evaluate_policy(params, &mut sim, eps, &mut rng)?, eps)
                }
            };
            let tt = average_travel_time(&stats);
            println!("{} seed {seed}: {:.2} s over {} vehicles", scenario.name, tt.seconds, tt.vehicles);
            records.push(EvalRecord {
                method: args.method,
                scenario: &scenario.name,
                seed,
                travel_time_s: tt.seconds,
                epsilon,
                vehicles: tt.vehicles,
            });
        }
    }
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_csv(&out.join("eval.csv"), &records)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn experiment_cmd(args: ExperimentArgs) -> Result<ExitCode> {
    let mut cfg = args.common.load()?;
    if let Some(methods) = args.method {
        cfg.methods = methods.0;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    let out = run_experiment(&cfg)?;
    for s in &out.summary {
        println!(
            "{:<18} {:<24} {:>10.2} ± {:<8.2} ({} runs)",
            s.method, s.scenario, s.mean_travel_time_s, s.std_travel_time_s, s.runs
        );
    }
    if cfg.methods.contains(&Method::ModelLight) && cfg.methods.len() > 1 {
        match compare_methods(&out.rows, Method::ModelLight) {
            Ok(c) => {
                c.write_csv(cfg.output_dir.join("comparison.csv"))?;
                print!("\n{}", c.to_text());
            }
            Err(e) => eprintln!("comparison skipped: {e}"),
        }
    }
    let failed: Vec<&ResultRow> = out.rows.iter().filter(|r| !r.is_ok()).collect();
    for r in &failed {
        eprintln!("{} on {} (seed {}) failed: {}", r.method, r.scenario, r.seed, r.error.as_deref().unwrap_or(""));
    }
    println!("results written to {}", cfg.output_dir.display());
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn compare_cmd(args: CompareArgs) -> Result<ExitCode> {
    let mut rows = Vec::new();
    for p in &args.results {
        let file = if p.is_dir() { p.join("results.csv") } else { p.clone() };
        rows.extend(read_results(&file)?);
    }
    let comparison = compare_methods(&rows, args.method)?;
    print!("{}", comparison.to_text());
    if let Some(out) = &args.out {
        create_dir(out)?;
        comparison.write_csv(out.join("comparison.csv"))?;
    }
    Ok(ExitCode::SUCCESS)
}
