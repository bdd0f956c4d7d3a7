use rand::seq::index;
use rand::Rng;

use crate::sim::{PhaseTable, Transition, TransitionKind};

/// Per-task transition store. Keeps insertion order so consecutive
/// transitions of an episode or rollout can be chained back into histories.
#[derive(Debug, Clone)]
pub struct TransitionSet {
    table: PhaseTable,
    items: Vec<Transition>,
}

impl TransitionSet {
    pub fn new(table: PhaseTable) -> Self {
        TransitionSet { table, items: Vec::new() }
    }

    pub fn table(&self) -> &PhaseTable {
        &self.table
    }

    pub fn push(&mut self, t: Transition) {
        self.items.push(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        self.items.extend(ts);
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn as_slice(&self) -> &[Transition] {
        &self.items
    }

    pub fn count(&self, kind: TransitionKind) -> usize {
        self.items.iter().filter(|t| t.kind == kind).count()
    }

    /// Transitions of one kind, in insertion order.
    pub fn of_kind(&self, kind: TransitionKind) -> Vec<Transition> {
        self.items.iter().filter(|t| t.kind == kind).copied().collect()
    }

    /// Uniform sample without replacement of `min(n, available)`
    /// transitions, optionally restricted to one kind.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, kind: Option<TransitionKind>, rng: &mut R) -> Vec<Transition> {
        let pool: Vec<usize> = match kind {
            Some(k) => (0..self.items.len()).filter(|&i| self.items[i].kind == k).collect(),
            None => (0..self.items.len()).collect(),
        };
        let take = n.min(pool.len());
        if take == 0 {
            return Vec::new();
        }
        index::sample(rng, pool.len(), take)
            .into_iter()
            .map(|i| self.items[pool[i]])
            .collect()
    }

    /// Indices for a sample, used where histories must be rebuilt.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, kind: Option<TransitionKind>, rng: &mut R) -> Vec<usize> {
        let pool: Vec<usize> = match kind {
            Some(k) => (0..self.items.len()).filter(|&i| self.items[i].kind == k).collect(),
            None => (0..self.items.len()).collect(),
        };
        let take = n.min(pool.len());
        if take == 0 {
            return Vec::new();
        }
        index::sample(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect()
    }

    /// Up to `window` transitions ending at `index` that form a contiguous
    /// trajectory (each `obs` equal to its predecessor's `next_obs`).
    pub fn history(&self, index: usize, window: usize) -> &[Transition] {
        let mut start = index;
        while start > 0 && index + 1 - start < window {
            let (prev, cur) = (&self.items[start - 1], &self.items[start]);
            if prev.kind != cur.kind || prev.next_obs != cur.obs {
                break;
            }
            start -= 1;
        }
        &self.items[start..=index]
    }
}
