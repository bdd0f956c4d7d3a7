use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DynamicsError, DynamicsModel, IntersectionModel, Normalization};
use crate::nn::{AdamState, Checkpoint};
use crate::sim::{decode_queues, step, IntersectionState, Observation, Scenario, ArrivalProcess, sample_arrivals};

/// One learned model per training task, or a single model shared by all
/// tasks when `shared` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEnsemble {
    pub models: Vec<IntersectionModel>,
    pub tasks: Vec<String>,
    pub shared: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: u32,
    shared: bool,
    normalization: Normalization,
    members: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: usize,
    task: String,
    file: String,
}

pub const MANIFEST_FILE: &str = "ensemble.json";

impl ModelEnsemble {
    /// Independently initialized models, one per task, each from its own
    /// seed stream.
    pub fn per_task<R: Rng + ?Sized>(tasks: Vec<String>, rng: &mut R) -> Self {
        let models = (0..tasks.len())
            .map(|i| IntersectionModel::new(i, &mut ChaCha8Rng::seed_from_u64(rng.gen())))
            .collect();
        ModelEnsemble { models, tasks, shared: false }
    }

    /// A single model used for every task.
    pub fn single<R: Rng + ?Sized>(tasks: Vec<String>, rng: &mut R) -> Self {
        let model = IntersectionModel::new(0, &mut ChaCha8Rng::seed_from_u64(rng.gen()));
        ModelEnsemble { models: vec![model], tasks, shared: true }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Index of the model responsible for `task`.
    pub fn member_for(&self, task: &str) -> Option<usize> {
        let t = self.tasks.iter().position(|name| name == task)?;
        Some(if self.shared { 0 } else { t })
    }

    pub fn model_for(&self, task: &str) -> Option<&IntersectionModel> {
        self.member_for(task).map(|i| &self.models[i])
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DynamicsError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| DynamicsError::Io(format!("{}: {e}", dir.display())))?;
        let mut members = Vec::new();
        for (i, model) in self.models.iter().enumerate() {
            let file = format!("model_{i}.params");
            Checkpoint::from_params("model", &model.params).save(dir.join(&file))?;
            let task = if self.shared { "*".to_string() } else { self.tasks[i].clone() };
            members.push(ManifestEntry { id: model.id, task, file });
        }
        let manifest = Manifest {
            format: 1,
            shared: self.shared,
            normalization: self.models.first().map(|m| m.norm).unwrap_or_default(),
            members,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), text).map_err(|e| DynamicsError::Io(e.to_string()))?;
        if self.shared {
            std::fs::write(dir.join("tasks.json"), serde_json::to_string_pretty(&self.tasks).expect("names"))
                .map_err(|e| DynamicsError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DynamicsError> {
        let dir = dir.as_ref();
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| DynamicsError::Io(format!("{}: {e}", p.display())));
        let manifest: Manifest = serde_json::from_str(&read(&dir.join(MANIFEST_FILE))?)
            .map_err(|e| DynamicsError::Io(format!("manifest: {e}")))?;
        let mut models = Vec::new();
        let mut tasks = Vec::new();
        for entry in &manifest.members {
            let mut model = IntersectionModel::zeros(entry.id);
            model.norm = manifest.normalization;
            Checkpoint::load(dir.join(&entry.file))?.load_params("model", &mut model.params)?;
            model.adam = AdamState::for_params(&model.params);
            models.push(model);
            tasks.push(entry.task.clone());
        }
        if manifest.shared {
            tasks = serde_json::from_str(&read(&dir.join("tasks.json"))?)
                .map_err(|e| DynamicsError::Io(format!("tasks: {e}")))?;
        }
        Ok(ModelEnsemble { models, tasks, shared: manifest.shared })
    }
}

/// Exact stand-in for a learned model on scenarios with deterministic,
/// time-invariant integer arrival rates: it replays the simulator's step.
#[derive(Debug, Clone)]
pub struct OracleModel {
    scenario: Scenario,
}

impl OracleModel {
    pub fn new(scenario: Scenario) -> Result<Self, DynamicsError> {
        if scenario.arrival_process != ArrivalProcess::Deterministic {
            return Err(DynamicsError::OracleNeedsDeterministicArrivals);
        }
        Ok(OracleModel { scenario })
    }
}

impl DynamicsModel for OracleModel {
    fn predict_history(&self, history: &[(Observation, usize)]) -> Result<(Observation, f64), DynamicsError> {
        let (obs, primary) = history.last().ok_or(DynamicsError::EmptySource)?;
        let table = &self.scenario.phase_table;
        let current = table
            .action_of_primary(obs.primary_phase())
            .ok_or(DynamicsError::InvalidAction(obs.primary_phase()))?;
        let action = table.action_of_primary(*primary).ok_or(DynamicsError::InvalidAction(*primary))?;
        let state = IntersectionState::with_queues(decode_queues(obs), current, table)?;
        let arrivals = sample_arrivals(&self.scenario, 0, &mut ChaCha8Rng::seed_from_u64(0));
        let out = step(&state, action, &arrivals, &self.scenario)?;
        Ok((crate::sim::encode_state(&out.state), out.reward))
    }
}
