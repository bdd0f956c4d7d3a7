use rand::Rng;

use super::dense::sigmoid;
use super::{ensure_finite, fan_in_uniform, Matrix, NnError, Parameters};

/// One LSTM layer. Gate rows are stacked in the order input, forget,
/// cell candidate, output; each block is `hidden` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub input_weights: Matrix,
    pub recurrent_weights: Matrix,
    pub bias: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        LstmLayer {
            input_weights: Matrix::zeros(4 * hidden, inputs),
            recurrent_weights: Matrix::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Fan-in uniform weights, zero biases except the forget gate at 1.
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let input_weights = Matrix::random(4 * hidden, inputs, rng, |r| fan_in_uniform(r, inputs));
        let recurrent_weights = Matrix::random(4 * hidden, hidden, rng, |r| fan_in_uniform(r, hidden));
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        LstmLayer { input_weights, recurrent_weights, bias }
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn inputs(&self) -> usize {
        self.input_weights.cols()
    }
}

/// Activations of one layer at one time step.
#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    /// Whether `h_prev` is the zero initial state.
    first: bool,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    layers: Vec<Vec<StepCache>>,
}

impl LstmCache {
    pub fn sequence_len(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }
}

/// Stack of LSTM layers run from zero initial hidden and cell states.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

impl Lstm {
    /// `sizes = [input, hidden_1, hidden_2, ...]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes.windows(2).map(|w| LstmLayer::new(w[0], w[1], rng)).collect();
        Lstm { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Lstm { layers: sizes.windows(2).map(|w| LstmLayer::zeros(w[0], w[1])).collect() }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, LstmLayer::hidden)
    }

    /// Returns the top layer's final hidden state.
    pub fn forward(&self, sequence: &[Vec<f64>]) -> Result<(Vec<f64>, LstmCache), NnError> {
        if sequence.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let mut inputs: Vec<Vec<f64>> = sequence.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let n = layer.hidden();
            let mut h = vec![0.0; n];
            let mut c = vec![0.0; n];
            let mut steps = Vec::with_capacity(inputs.len());
            let mut outputs = Vec::with_capacity(inputs.len());
            for (t, x) in inputs.iter().enumerate() {
                if x.len() != layer.inputs() {
                    return Err(NnError::Shape(format!(
                        "lstm layer expects {} inputs, got {} at step {t}",
                        layer.inputs(),
                        x.len()
                    )));
                }
                let first = t == 0;
                let mut z = layer.bias.clone();
                layer.input_weights.matvec_acc(x, &mut z);
                if !first {
                    layer.recurrent_weights.matvec_acc(&h, &mut z);
                }
                let mut gates = z;
                for (j, v) in gates.iter_mut().enumerate() {
                    *v = if (2 * n..3 * n).contains(&j) { v.tanh() } else { sigmoid(*v) };
                }
                let mut c_new = vec![0.0; n];
                let mut tanh_c = vec![0.0; n];
                let mut h_new = vec![0.0; n];
                for j in 0..n {
                    let (i, f, g, o) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
                    c_new[j] = f * c[j] + i * g;
                    tanh_c[j] = c_new[j].tanh();
                    h_new[j] = o * tanh_c[j];
                }
                steps.push(StepCache {
                    x: x.clone(),
                    h_prev: std::mem::replace(&mut h, h_new),
                    c_prev: std::mem::replace(&mut c, c_new),
                    gates,
                    tanh_c,
                    first,
                });
                outputs.push(h.clone());
            }
            caches.push(steps);
            inputs = outputs;
        }
        let out = inputs.pop().expect("non-empty sequence");
        ensure_finite(&out, "lstm forward")?;
        Ok((out, LstmCache { layers: caches }))
    }

    /// Backpropagation through time from a gradient on the final top-layer
    /// hidden state. Parameter gradients accumulate into `grads`; the
    /// gradient with respect to each input vector is returned.
    pub fn backward(&self, cache: &LstmCache, grad_final: &[f64], grads: &mut Lstm) -> Result<Vec<Vec<f64>>, NnError> {
        if cache.layers.len() != self.layers.len() || cache.sequence_len() == 0 {
            return Err(NnError::Shape("lstm backward: cache does not belong to this network".into()));
        }
        if grad_final.len() != self.output_size() {
            return Err(NnError::Shape(format!(
                "lstm backward expects gradient of length {}, got {}",
                self.output_size(),
                grad_final.len()
            )));
        }
        let len = cache.sequence_len();
        // Gradient flowing into each time step's hidden output of the current layer.
        let mut dh_out: Vec<Vec<f64>> = vec![vec![0.0; self.output_size()]; len];
        dh_out[len - 1] = grad_final.to_vec();

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let n = layer.hidden();
            let g = &mut grads.layers[l];
            let steps = &cache.layers[l];
            let mut dh_next = vec![0.0; n];
            let mut dc_next = vec![0.0; n];
            let mut dx_all = vec![Vec::new(); len];
            for t in (0..len).rev() {
                let s = &steps[t];
                let mut dz = vec![0.0; 4 * n];
                let mut dc_prev = vec![0.0; n];
                for j in 0..n {
                    let (i, f, gc, o) = (s.gates[j], s.gates[n + j], s.gates[2 * n + j], s.gates[3 * n + j]);
                    let dh = dh_out[t][j] + dh_next[j];
                    let tc = s.tanh_c[j];
                    let d_o = dh * tc;
                    let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                    dz[j] = dc * gc * i * (1.0 - i);
                    dz[n + j] = dc * s.c_prev[j] * f * (1.0 - f);
                    dz[2 * n + j] = dc * i * (1.0 - gc * gc);
                    dz[3 * n + j] = d_o * o * (1.0 - o);
                    dc_prev[j] = dc * f;
                }
                g.input_weights.add_outer(&dz, &s.x);
                for (b, d) in g.bias.iter_mut().zip(&dz) {
                    *b += d;
                }
                let mut dx = vec![0.0; layer.inputs()];
                layer.input_weights.matvec_t_acc(&dz, &mut dx);
                let mut dh_prev = vec![0.0; n];
                if !s.first {
                    g.recurrent_weights.add_outer(&dz, &s.h_prev);
                    layer.recurrent_weights.matvec_t_acc(&dz, &mut dh_prev);
                }
                dh_next = dh_prev;
                dc_next = dc_prev;
                dx_all[t] = dx;
            }
            dh_out = dx_all;
        }
        for dx in &dh_out {
            ensure_finite(dx, "lstm backward")?;
        }
        Ok(dh_out)
    }
}

impl Parameters for Lstm {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &layer.input_weights;
            let u = &layer.recurrent_weights;
            f(&format!("layer{l}.input_weights"), &[w.rows(), w.cols()], w.as_slice());
            f(&format!("layer{l}.recurrent_weights"), &[u.rows(), u.cols()], u.as_slice());
            f(&format!("layer{l}.bias"), &[layer.bias.len()], &layer.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("layer{l}.input_weights"), layer.input_weights.as_mut_slice());
            f(&format!("layer{l}.recurrent_weights"), layer.recurrent_weights.as_mut_slice());
            f(&format!("layer{l}.bias"), &mut layer.bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_gradient, relative_error, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(len: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let net = Lstm::zeros(&[16, 16, 64]);
        let (h, _) = net.forward(&seq(3, 16, 1)).unwrap();
        assert_eq!(h.len(), 64);
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_sequence_rejected() {
        let net = Lstm::zeros(&[2, 3]);
        assert_eq!(net.forward(&[]).unwrap_err(), NnError::EmptySequence);
    }

    #[test]
    fn single_unit_hand_calculation() {
        let layer = LstmLayer {
            input_weights: Matrix::from_vec(4, 1, vec![0.5; 4]).unwrap(),
            recurrent_weights: Matrix::from_vec(4, 1, vec![0.5; 4]).unwrap(),
            bias: vec![0.0; 4],
        };
        let net = Lstm { layers: vec![layer] };
        let (h, _) = net.forward(&[vec![1.0]]).unwrap();
        // i = f = o = sigmoid(0.5), g = tanh(0.5), c = i g, h = o tanh(c);
        // evaluated independently in double precision.
        assert!((h[0] - 0.17426971865610508).abs() < 1e-12, "{}", h[0]);
    }

    #[test]
    fn length_one_is_a_single_cell_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Lstm::new(&[3, 2], &mut rng);
        let x = vec![0.3, -0.2, 0.9];
        let (h, _) = net.forward(&[x.clone()]).unwrap();
        let l = &net.layers[0];
        for j in 0..2 {
            let pre = |gate: usize| {
                let r = gate * 2 + j;
                l.bias[r] + (0..3).map(|k| l.input_weights.get(r, k) * x[k]).sum::<f64>()
            };
            let (i, g, o) = (sigmoid(pre(0)), pre(2).tanh(), sigmoid(pre(3)));
            let expected = o * (i * g).tanh();
            assert!((h[j] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let net = Lstm::new(&[16, 16, 64], &mut ChaCha8Rng::seed_from_u64(0));
        assert!(net.layers[1].bias[64..128].iter().all(|&b| b == 1.0));
        assert!(net.layers[1].bias[..64].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Lstm::new(&[4, 3, 5], &mut ChaCha8Rng::seed_from_u64(2));
        let (_, cache) = net.forward(&seq(3, 4, 9)).unwrap();
        let mut grads = zeros_like(&net);
        net.backward(&cache, &[0.0; 5], &mut grads).unwrap();
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Lstm::new(&[4, 3, 5], &mut rng);
            let xs = seq(1 + (seed as usize % 4), 4, seed + 100);
            let w: Vec<f64> = (0..5).map(|i| 0.5 - 0.2 * i as f64).collect();
            let loss = |p: &Lstm| {
                let (h, _) = p.forward(&xs).unwrap();
                h.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache) = net.forward(&xs).unwrap();
            let mut grads = zeros_like(&net);
            net.backward(&cache, &w, &mut grads).unwrap();
            let fd = finite_difference_gradient(&net, loss, 1e-5);
            let err = relative_error(&grads.to_flat(), &fd);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
