use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::MetaError;
use crate::dynamics::{DynamicsModel, RolloutGenerator};
use crate::sim::{Observation, PhaseTable, Scenario, Simulator, Transition, TransitionKind};

/// The training task distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPool {
    tasks: Vec<Scenario>,
}

impl TaskPool {
    pub fn new(tasks: Vec<Scenario>) -> Result<Self, MetaError> {
        if tasks.is_empty() {
            return Err(MetaError::EmptyPool);
        }
        for (i, t) in tasks.iter().enumerate() {
            t.validate()?;
            if tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(MetaError::DuplicateTask(t.name.clone()));
            }
        }
        Ok(TaskPool { tasks })
    }

    pub fn tasks(&self) -> &[Scenario] {
        &self.tasks
    }

    pub fn names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// `k` distinct task indices, or `k` independent draws when the pool
    /// holds fewer than `k` tasks.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        if k <= self.tasks.len() {
            index::sample(rng, self.tasks.len(), k).into_vec()
        } else {
            (0..k).map(|_| rng.gen_range(0..self.tasks.len())).collect()
        }
    }
}

/// Something that yields one transition per call, given a behaviour policy
/// over observations.
pub trait TransitionSource {
    fn table(&self) -> &PhaseTable;
    fn kind(&self) -> TransitionKind;
    fn next_transition(&mut self, policy: &mut dyn FnMut(&Observation) -> usize) -> Result<Transition, MetaError>;
}

/// The simulator as a task. Episodes restart when the horizon is reached.
pub struct RealSource<'a> {
    pub sim: &'a mut Simulator<ChaCha8Rng>,
    pub completed: Vec<crate::sim::EpisodeStats>,
}

impl<'a> RealSource<'a> {
    pub fn new(sim: &'a mut Simulator<ChaCha8Rng>) -> Self {
        RealSource { sim, completed: Vec::new() }
    }
}

impl TransitionSource for RealSource<'_> {
    fn table(&self) -> &PhaseTable {
        &self.sim.scenario().phase_table
    }

    fn kind(&self) -> TransitionKind {
        TransitionKind::Real
    }

    fn next_transition(&mut self, policy: &mut dyn FnMut(&Observation) -> usize) -> Result<Transition, MetaError> {
        if self.sim.is_done() {
            self.completed.push(self.sim.finish());
            self.sim.reset();
        }
        let action = policy(&self.sim.observe());
        Ok(self.sim.step(action)?)
    }
}

/// A learned model as a task: short rollouts started from real states.
pub struct ImaginarySource<'a> {
    model: &'a dyn DynamicsModel,
    starts: &'a [Transition],
    table: &'a PhaseTable,
    generator: RolloutGenerator,
    rng: ChaCha8Rng,
}

impl<'a> ImaginarySource<'a> {
    pub fn new(
        model: &'a dyn DynamicsModel,
        starts: &'a [Transition],
        table: &'a PhaseTable,
        rollout_length: usize,
        history_window: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self, MetaError> {
        Ok(ImaginarySource {
            model,
            starts,
            table,
            generator: RolloutGenerator::new(rollout_length, history_window)?,
            rng,
        })
    }
}

impl TransitionSource for ImaginarySource<'_> {
    fn table(&self) -> &PhaseTable {
        self.table
    }

    fn kind(&self) -> TransitionKind {
        TransitionKind::Imaginary
    }

    fn next_transition(&mut self, policy: &mut dyn FnMut(&Observation) -> usize) -> Result<Transition, MetaError> {
        Ok(self.generator.next(self.model, self.starts, self.table, policy, &mut self.rng)?)
    }
}
