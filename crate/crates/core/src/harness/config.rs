use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::meta::{EnsembleMode, MetaConfig};
use crate::sim::{load_scenario, Scenario};

/// Training algorithm under comparison. Every learning method uses the same
/// Q-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "modellight")]
    ModelLight,
    /// ModelLight with one dynamics model shared by all tasks.
    #[serde(rename = "modellight-single")]
    ModelLightSingle,
    /// Real-transition meta-training only.
    #[serde(rename = "metalight")]
    MetaLightLike,
    /// One meta update per task episode.
    #[serde(rename = "maml")]
    MamlLike,
    #[serde(rename = "dqn-scratch")]
    DqnScratch,
    #[serde(rename = "fixed-cycle")]
    FixedCycle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ModelLight,
        Method::ModelLightSingle,
        Method::MetaLightLike,
        Method::MamlLike,
        Method::DqnScratch,
        Method::FixedCycle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ModelLight => "modellight",
            Method::ModelLightSingle => "modellight-single",
            Method::MetaLightLike => "metalight",
            Method::MamlLike => "maml",
            Method::DqnScratch => "dqn-scratch",
            Method::FixedCycle => "fixed-cycle",
        }
    }

    pub fn is_meta(self) -> bool {
        matches!(self, Method::ModelLight | Method::ModelLightSingle | Method::MetaLightLike | Method::MamlLike)
    }

    /// The meta-training configuration this method runs with, derived from
    /// the shared base. `None` for methods without meta-training.
    pub fn meta_config(self, base: &MetaConfig) -> Option<MetaConfig> {
        let mut cfg = base.clone();
        match self {
            Method::ModelLight => {
                cfg.use_model = true;
                cfg.ensemble = EnsembleMode::PerTask;
            }
            Method::ModelLightSingle => {
                cfg.use_model = true;
                cfg.ensemble = EnsembleMode::Single;
            }
            Method::MetaLightLike => cfg.use_model = false,
            Method::MamlLike => {
                cfg.use_model = false;
                cfg.meta_update_frequency = cfg.real_transitions_per_task;
            }
            Method::DqnScratch | Method::FixedCycle => return None,
        }
        Some(cfg)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            HarnessError::Config(format!("unknown method `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnScratchConfig {
    pub episodes: usize,
    pub learning_rate: f64,
}

impl Default for DqnScratchConfig {
    fn default() -> Self {
        DqnScratchConfig { episodes: 50, learning_rate: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedCycleConfig {
    /// Decision intervals each phase is held before moving to the next.
    pub hold_steps: usize,
}

impl Default for FixedCycleConfig {
    fn default() -> Self {
        FixedCycleConfig { hold_steps: 3 }
    }
}

/// One experiment: which methods to run, on which scenarios, with which seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub methods: Vec<Method>,
    /// Scenario files or directories of them used for meta-training.
    #[serde(default)]
    pub training_pool: Vec<PathBuf>,
    /// Scenario files or directories of them used for adaptation and evaluation.
    #[serde(default)]
    pub test_scenarios: Vec<PathBuf>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default)]
    pub dqn_scratch: DqnScratchConfig,
    #[serde(default)]
    pub fixed_cycle: FixedCycleConfig,
    /// Size of the job pool; defaults to the number of available cores.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    /// Parses a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = ExperimentConfig::from_json(&text).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.training_pool.iter_mut().for_each(resolve);
        cfg.test_scenarios.iter_mut().for_each(resolve);
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.test_scenarios.is_empty() {
            return bad("at least one test scenario is required".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method `{m}` listed twice"));
            }
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad(format!("seed {s} listed twice"));
            }
        }
        if self.workers == Some(0) {
            return bad("`workers` must be positive".into());
        }
        for m in &self.methods {
            if let Some(cfg) = m.meta_config(&self.meta) {
                if self.training_pool.is_empty() {
                    return bad(format!("method `{m}` needs a training pool"));
                }
                cfg.validate().map_err(|e| HarnessError::Config(format!("method `{m}`: {e}")))?;
            }
            if *m == Method::DqnScratch {
                let d = &self.dqn_scratch;
                if d.episodes == 0 {
                    return bad("`dqn_scratch.episodes` must be positive".into());
                }
                if !d.learning_rate.is_finite() || d.learning_rate < 0.0 {
                    return bad("`dqn_scratch.learning_rate` must be finite and non-negative".into());
                }
                self.meta.validate().map_err(|e| HarnessError::Config(format!("method `{m}`: {e}")))?;
            }
            if *m == Method::FixedCycle && self.fixed_cycle.hold_steps == 0 {
                return bad("`fixed_cycle.hold_steps` must be positive".into());
            }
        }
        Ok(())
    }
}

/// Loads every scenario named by `paths`, expanding directories to their
/// `.json` files in name order. Names must be unique.
pub fn load_scenarios(paths: &[PathBuf]) -> Result<Vec<Scenario>, HarnessError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| HarnessError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.extension().is_some_and(|x| x == "json"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    let mut scenarios: Vec<Scenario> = Vec::with_capacity(files.len());
    for f in &files {
        let s = load_scenario(f)?;
        if scenarios.iter().any(|o| o.name == s.name) {
            return Err(HarnessError::Config(format!("{}: scenario name `{}` is not unique", f.display(), s.name)));
        }
        scenarios.push(s);
    }
    Ok(scenarios)
}
