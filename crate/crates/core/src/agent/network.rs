use rand::Rng;

use super::AgentError;
use crate::nn::{Dense, Parameters};
use crate::sim::{Observation, PhaseTable, NUM_MOVEMENTS};

pub const MOVEMENT_FEATURES: usize = 2;
pub const EMBED_DIM: usize = 16;
pub const SCORER_INPUT_DIM: usize = 2 * EMBED_DIM;
/// Queue counts are divided by this before entering the encoder.
pub const QUEUE_SCALE: f64 = 20.0;

/// Phase-scoring Q-network. One encoder is shared by all eight movements
/// and one scorer by all phases, so the same weights serve any phase table.
///
/// A phase's score sees the summed embeddings of its two movements next to
/// the mean embedding of all movements.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub encoder: Dense,
    pub scorer: Dense,
}

impl Parameters for PolicyParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&mut |n, s, d| f(&format!("encoder.{n}"), s, d));
        self.scorer.visit(&mut |n, s, d| f(&format!("scorer.{n}"), s, d));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&mut |n, d| f(&format!("encoder.{n}"), d));
        self.scorer.visit_mut(&mut |n, d| f(&format!("scorer.{n}"), d));
    }
}

thread_local! {
    static CONSTRUCTED: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Number of Q-networks built on the calling thread so far.
pub fn networks_constructed() -> u64 {
    CONSTRUCTED.with(|c| c.get())
}

fn note_construction() {
    CONSTRUCTED.with(|c| c.set(c.get() + 1));
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        note_construction();
        PolicyParams {
            encoder: Dense::new(MOVEMENT_FEATURES, EMBED_DIM, rng),
            scorer: Dense::new(SCORER_INPUT_DIM, 1, rng),
        }
    }

    pub fn zeros() -> Self {
        note_construction();
        PolicyParams {
            encoder: Dense::zeros(MOVEMENT_FEATURES, EMBED_DIM),
            scorer: Dense::zeros(SCORER_INPUT_DIM, 1),
        }
    }
}

/// `(queue / QUEUE_SCALE, green flag)` for every movement.
pub fn movement_features(obs: &Observation) -> [[f64; MOVEMENT_FEATURES]; NUM_MOVEMENTS] {
    let green = obs.green_mask();
    std::array::from_fn(|k| [obs.0[k] / QUEUE_SCALE, if green[k] { 1.0 } else { 0.0 }])
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct QTrace {
    features: [[f64; MOVEMENT_FEATURES]; NUM_MOVEMENTS],
    embeddings: [[f64; EMBED_DIM]; NUM_MOVEMENTS],
    context: [f64; EMBED_DIM],
    pub(crate) q: Vec<f64>,
}

pub(crate) fn trace(params: &PolicyParams, obs: &Observation, table: &PhaseTable) -> QTrace {
    let features = movement_features(obs);
    let w = params.encoder.weights.as_slice();
    let b = &params.encoder.bias;
    let mut embeddings = [[0.0; EMBED_DIM]; NUM_MOVEMENTS];
    let mut context = [0.0; EMBED_DIM];
    for (x, e) in features.iter().zip(embeddings.iter_mut()) {
        for i in 0..EMBED_DIM {
            let z = b[i] + w[i * MOVEMENT_FEATURES] * x[0] + w[i * MOVEMENT_FEATURES + 1] * x[1];
            e[i] = z.max(0.0);
            context[i] += e[i] / NUM_MOVEMENTS as f64;
        }
    }
    let sw = params.scorer.weights.as_slice();
    let sb = params.scorer.bias[0];
    let context_score: f64 = (0..EMBED_DIM).map(|i| sw[EMBED_DIM + i] * context[i]).sum();
    let q = table
        .phases()
        .iter()
        .map(|phase| {
            let [a, c] = phase.movements.map(|m| m.index());
            sb + context_score + (0..EMBED_DIM).map(|i| sw[i] * (embeddings[a][i] + embeddings[c][i])).sum::<f64>()
        })
        .collect();
    QTrace { features, embeddings, context, q }
}

/// Q value of every phase in `table`, in table order.
pub fn q_values(params: &PolicyParams, obs: &Observation, table: &PhaseTable) -> Vec<f64> {
    trace(params, obs, table).q
}

/// Adds `dq * dQ(action)/dparams` to `grads`.
pub(crate) fn backprop_q(
    params: &PolicyParams,
    tr: &QTrace,
    table: &PhaseTable,
    action: usize,
    dq: f64,
    grads: &mut PolicyParams,
) -> Result<(), AgentError> {
    let phase = table.phase(action)?;
    let [a, c] = phase.movements.map(|m| m.index());
    let sw = params.scorer.weights.as_slice();
    {
        let gw = grads.scorer.weights.as_mut_slice();
        for i in 0..EMBED_DIM {
            gw[i] += dq * (tr.embeddings[a][i] + tr.embeddings[c][i]);
            gw[EMBED_DIM + i] += dq * tr.context[i];
        }
        grads.scorer.bias[0] += dq;
    }
    let gw = grads.encoder.weights.as_mut_slice();
    for k in 0..NUM_MOVEMENTS {
        let in_phase = if k == a || k == c { 1.0 } else { 0.0 };
        for i in 0..EMBED_DIM {
            if tr.embeddings[k][i] <= 0.0 {
                continue;
            }
            let dz = dq * (in_phase * sw[i] + sw[EMBED_DIM + i] / NUM_MOVEMENTS as f64);
            gw[i * MOVEMENT_FEATURES] += dz * tr.features[k][0];
            gw[i * MOVEMENT_FEATURES + 1] += dz * tr.features[k][1];
            grads.encoder.bias[i] += dz;
        }
    }
    Ok(())
}
