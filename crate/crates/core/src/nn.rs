//! A small dense network: ReLU hidden layers, linear output, scalar
//! SGD. This is all the function approximation the Q-learner needs, and
//! keeping it in-crate keeps training bit-reproducible across machines.
//!
//! Flat parameter order (used by checkpoints and reference code): for
//! each layer, the weight matrix row-major in output-by-input order,
//! then the biases.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rngs::ChaCha12Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    /// Per layer, `dims[l+1] x dims[l]` entries, row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer activations of one forward pass; `activations[0]` is the
/// input and the last entry the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Gradients {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Gradients {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= s;
            }
        }
    }
}

impl Mlp {
    /// Xavier-uniform weights (`limit = sqrt(6 / (fan_in + fan_out))`),
    /// zero biases.
    pub fn xavier(dims: &[usize], rng: &mut ChaCha12Rng) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output layers");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = libm::sqrt(6.0 / (n_in + n_out) as f64);
            weights.push(
                (0..n_in * n_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; n_out]);
        }
        Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).activations.pop().expect("output layer")
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(x.len(), self.dims[0], "input width");
        let mut activations = Vec::with_capacity(self.dims.len());
        activations.push(x.to_vec());
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let prev = &activations[l];
            let w = &self.weights[l];
            let mut next = self.biases[l].clone();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                next[o] += row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
            }
            if l + 1 < self.layer_count() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            activations.push(next);
        }
        ForwardCache { activations }
    }

    /// Accumulates `d loss / d params` into `grads`, given
    /// `d loss / d output` for the pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut Gradients) {
        assert_eq!(grad_out.len(), *self.dims.last().unwrap(), "output width");
        let mut delta = grad_out.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let prev = &cache.activations[l];
            // ReLU gate for hidden layers: the stored activation is the
            // post-ReLU value, so `> 0` recovers the mask.
            if l + 1 < self.layer_count() {
                for (d, &a) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let gw = &mut grads.weights[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, &a) in row.iter_mut().zip(prev) {
                        *g += d * a;
                    }
                }
                grads.biases[l][o] += d;
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut prev_delta = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        for (p, &wv) in prev_delta.iter_mut().zip(row) {
                            *p += d * wv;
                        }
                    }
                }
                delta = prev_delta;
            }
        }
    }

    /// Plain gradient step `p -= lr * g`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (w, g) in w.iter_mut().zip(g) {
                *w -= lr * g;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (b, g) in b.iter_mut().zip(g) {
                *b -= lr * g;
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat
    }

    pub fn from_flat(dims: &[usize], flat: &[f64]) -> Mlp {
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for w in dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            weights.push(flat[off..off + n_in * n_out].to_vec());
            off += n_in * n_out;
            biases.push(flat[off..off + n_out].to_vec());
            off += n_out;
        }
        assert_eq!(off, flat.len(), "parameter count");
        Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }
}
