//! Small dense regressor with reverse-mode gradients and an
//! adaptive-moment optimizer.
//!
//! Hidden layers use the hyperbolic tangent, the output layer is linear.
//! Everything is deterministic under a seed. The output layer is
//! zero-initialized so a fresh model evaluates to zero everywhere, which
//! makes an untrained estimator coincide with the purely nominal filter.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Fully connected network; weights are row-major `[out x in]` per layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Hidden layers get uniform Xavier initialization from the seed; the
    /// output layer starts at zero.
    pub fn seeded(widths: &[usize], seed: u64) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let last = l == layers - 1;
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| {
                    let v = rng.gen_range(-scale..scale);
                    if last {
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            widths: widths.to_vec(),
            weights,
            biases,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Evaluate a single input.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim());
        let mut a = input.to_vec();
        for l in 0..self.layers() {
            let n_in = self.widths[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                let mut acc = *zo;
                for i in 0..n_in {
                    acc += row[i] * a[i];
                }
                *zo = acc;
            }
            if l != self.layers() - 1 {
                for zo in z.iter_mut() {
                    *zo = zo.tanh();
                }
            }
            a = z;
        }
        a
    }

    /// Evaluate a batch (`n` rows, flat row-major input) keeping every
    /// layer's activations for the backward pass.
    pub fn forward_batch(&self, inputs: &[f64], n: usize) -> BatchActivations {
        assert_eq!(inputs.len(), n * self.input_dim());
        let mut acts = Vec::with_capacity(self.layers() + 1);
        acts.push(inputs.to_vec());
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let prev = &acts[l];
            let mut out = vec![0.0; n * n_out];
            for m in 0..n {
                let row_in = &prev[m * n_in..(m + 1) * n_in];
                let row_out = &mut out[m * n_out..(m + 1) * n_out];
                for (o, ro) in row_out.iter_mut().enumerate() {
                    let w = &self.weights[l][o * n_in..(o + 1) * n_in];
                    let mut acc = self.biases[l][o];
                    for i in 0..n_in {
                        acc += w[i] * row_in[i];
                    }
                    *ro = if l == self.layers() - 1 { acc } else { acc.tanh() };
                }
            }
            acts.push(out);
        }
        BatchActivations { n, acts }
    }

    /// Accumulate parameter gradients for the batch given the loss gradient
    /// with respect to the network outputs (flat `n x output_dim`).
    pub fn backward_batch(
        &self,
        batch: &BatchActivations,
        out_grads: &[f64],
        grads: &mut Gradients,
    ) {
        let n = batch.n;
        assert_eq!(out_grads.len(), n * self.output_dim());
        let mut dz = out_grads.to_vec();
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let a_prev = &batch.acts[l];
            for m in 0..n {
                let dz_row = &dz[m * n_out..(m + 1) * n_out];
                let a_row = &a_prev[m * n_in..(m + 1) * n_in];
                for (o, &d) in dz_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let wrow = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        wrow[i] += d * a_row[i];
                    }
                    grads.biases[l][o] += d;
                }
            }
            if l == 0 {
                break;
            }
            // propagate to the previous activation and through its tanh
            let mut prev_dz = vec![0.0; n * n_in];
            for m in 0..n {
                let dz_row = &dz[m * n_out..(m + 1) * n_out];
                let da_row = &mut prev_dz[m * n_in..(m + 1) * n_in];
                for (o, &d) in dz_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let w = &self.weights[l][o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        da_row[i] += d * w[i];
                    }
                }
                let a_row = &a_prev[m * n_in..(m + 1) * n_in];
                for i in 0..n_in {
                    da_row[i] *= 1.0 - a_row[i] * a_row[i];
                }
            }
            dz = prev_dz;
        }
    }

    // Flat parameter indexing in [w0, b0, w1, b1, ...] order, used by the
    // finite-difference gradient checks and the optimizer.

    pub fn param_count(&self) -> usize {
        (0..self.layers())
            .map(|l| self.widths[l] * self.widths[l + 1] + self.widths[l + 1])
            .sum()
    }

    pub fn param(&self, index: usize) -> f64 {
        let (l, in_weights, offset) = self.locate(index);
        if in_weights {
            self.weights[l][offset]
        } else {
            self.biases[l][offset]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (l, in_weights, offset) = self.locate(index);
        if in_weights {
            self.weights[l][offset] = value;
        } else {
            self.biases[l][offset] = value;
        }
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for l in 0..self.layers() {
            let nw = self.widths[l] * self.widths[l + 1];
            if index < nw {
                return (l, true, index);
            }
            index -= nw;
            let nb = self.widths[l + 1];
            if index < nb {
                return (l, false, index);
            }
            index -= nb;
        }
        panic!("parameter index out of range");
    }

    pub(crate) fn layer_arrays(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    /// Rebuild from arrays in `[w0, b0, w1, b1, ...]` order, rejecting any
    /// shape mismatch against the declared widths.
    pub(crate) fn from_layer_arrays(
        widths: Vec<usize>,
        arrays: Vec<Vec<f64>>,
    ) -> Result<Self, String> {
        if widths.len() < 2 {
            return Err("need at least input and output widths".to_string());
        }
        let layers = widths.len() - 1;
        if arrays.len() != 2 * layers {
            return Err(format!(
                "expected {} parameter arrays, got {}",
                2 * layers,
                arrays.len()
            ));
        }
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        let mut it = arrays.into_iter();
        for l in 0..layers {
            let w = it.next().unwrap();
            let b = it.next().unwrap();
            if w.len() != widths[l] * widths[l + 1] {
                return Err(format!(
                    "layer {l} weight array has {} entries, expected {}",
                    w.len(),
                    widths[l] * widths[l + 1]
                ));
            }
            if b.len() != widths[l + 1] {
                return Err(format!(
                    "layer {l} bias array has {} entries, expected {}",
                    b.len(),
                    widths[l + 1]
                ));
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            widths,
            weights,
            biases,
        })
    }
}

/// Per-layer activations of a batch forward pass. `acts[0]` is the input.
pub struct BatchActivations {
    n: usize,
    acts: Vec<Vec<f64>>,
}

impl BatchActivations {
    /// Network outputs, flat `n x output_dim`.
    pub fn outputs(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn param(&self, mlp: &Mlp, index: usize) -> f64 {
        let (l, in_weights, offset) = mlp.locate(index);
        if in_weights {
            self.weights[l][offset]
        } else {
            self.biases[l][offset]
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, g| m.max(g.abs()))
    }
}

/// Standard first/second-moment adaptive update with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(mlp: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            m_w: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for l in 0..mlp.weights.len() {
            update_slice(
                &mut mlp.weights[l],
                &grads.weights[l],
                &mut self.m_w[l],
                &mut self.v_w[l],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                c1,
                c2,
            );
            update_slice(
                &mut mlp.biases[l],
                &grads.biases[l],
                &mut self.m_b[l],
                &mut self.v_b[l],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                c1,
                c2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
