//! Small double-precision network kernel: dense layers, stacked LSTMs,
//! hand-written backpropagation, SGD and Adam, a finite-difference gradient
//! oracle and a versioned text checkpoint format.

mod checkpoint;
mod dense;
mod gradcheck;
mod lstm;
mod matrix;
mod optim;

use rand::Rng;
use thiserror::Error;

pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{Activation, Dense, DenseCache};
pub use gradcheck::{finite_difference_gradient, relative_error};
pub use lstm::{Lstm, LstmCache, LstmLayer};
pub use matrix::Matrix;
pub use optim::{adam_update, sgd_update, AdamState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("input sequence is empty")]
    EmptySequence,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Uniform access to every trainable array of a network.
///
/// Arrays are visited in a fixed order; optimizers, gradient checks and
/// checkpoints all rely on that order being stable.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, data| n += data.len());
        n
    }

    /// Names and shapes, in visiting order.
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, shape, _| out.push((name.to_string(), shape.to_vec())));
        out
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        self.visit(&mut |_, _, data| out.extend_from_slice(data));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let expected = self.num_parameters();
        if flat.len() != expected {
            return Err(NnError::Shape(format!("expected {expected} values, got {}", flat.len())));
        }
        let mut offset = 0;
        self.visit_mut(&mut |_, data| {
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        });
        Ok(())
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, data| data.iter_mut().for_each(|x| *x = value));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, data| ok &= data.iter().all(|x| x.is_finite()));
        ok
    }
}

/// Same-shaped copy with every value zero; the gradient accumulator shape.
pub fn zeros_like<P: Parameters + Clone>(params: &P) -> P {
    let mut z = params.clone();
    z.fill(0.0);
    z
}

/// `acc += scale * other`, elementwise over matching layouts.
pub fn accumulate<P: Parameters>(acc: &mut P, other: &P, scale: f64) -> Result<(), NnError> {
    check_same_layout(acc, other)?;
    let flat = other.to_flat();
    let mut offset = 0;
    acc.visit_mut(&mut |_, data| {
        let n = data.len();
        for (a, b) in data.iter_mut().zip(&flat[offset..offset + n]) {
            *a += scale * b;
        }
        offset += n;
    });
    Ok(())
}

pub(crate) fn check_same_layout<A: Parameters + ?Sized, B: Parameters + ?Sized>(a: &A, b: &B) -> Result<(), NnError> {
    let (la, lb) = (a.layout(), b.layout());
    if la != lb {
        return Err(NnError::Shape(format!("parameter layouts differ: {la:?} vs {lb:?}")));
    }
    Ok(())
}

/// Samples `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn fan_in_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize) -> f64 {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    rng.gen_range(-bound..=bound)
}

impl Parameters for Vec<f64> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("values", &[self.len()], self);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("values", self);
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<(), NnError> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite(what))
    }
}
