use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_finite, fan_in_uniform, Matrix, NnError, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` of shape out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { weights: Matrix::zeros(outputs, inputs), bias: vec![0.0; outputs] }
    }

    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weights = Matrix::random(outputs, inputs, rng, |r| fan_in_uniform(r, inputs));
        let bias = (0..outputs).map(|_| fan_in_uniform(rng, inputs)).collect();
        Dense { weights, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, input: &[f64], activation: Activation) -> Result<(Vec<f64>, DenseCache), NnError> {
        if input.len() != self.inputs() {
            return Err(NnError::Shape(format!("dense layer expects {} inputs, got {}", self.inputs(), input.len())));
        }
        let mut out = self.bias.clone();
        self.weights.matvec_acc(input, &mut out);
        for v in out.iter_mut() {
            *v = activation.apply(*v);
        }
        ensure_finite(&out, "dense forward")?;
        let cache = DenseCache { input: input.to_vec(), output: out.clone(), activation };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(&self, cache: &DenseCache, grad_output: &[f64], grads: &mut Dense) -> Result<Vec<f64>, NnError> {
        if grad_output.len() != self.outputs() || cache.input.len() != self.inputs() {
            return Err(NnError::Shape("dense backward: cache or gradient does not match layer".into()));
        }
        let delta: Vec<f64> = grad_output
            .iter()
            .zip(&cache.output)
            .map(|(g, y)| g * cache.activation.derivative_from_output(*y))
            .collect();
        grads.weights.add_outer(&delta, &cache.input);
        for (b, d) in grads.bias.iter_mut().zip(&delta) {
            *b += d;
        }
        let mut grad_input = vec![0.0; self.inputs()];
        self.weights.matvec_t_acc(&delta, &mut grad_input);
        ensure_finite(&grad_input, "dense backward")?;
        Ok(grad_input)
    }
}

impl Parameters for Dense {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("weights", &[self.weights.rows(), self.weights.cols()], self.weights.as_slice());
        f("bias", &[self.bias.len()], &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("weights", self.weights.as_mut_slice());
        f("bias", &mut self.bias);
    }
}
