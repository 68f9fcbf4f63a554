//! Minimal fully connected network with hand-derived backpropagation.
//!
//! ReLU after every layer except the last; the final layer is linear.
//! All arithmetic is f64 with fixed summation order, so results are
//! bitwise reproducible on a fixed platform.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One dense layer, weights row-major `[out x in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }
}

/// Dense network: `dims[0] -> dims[1] -> ... -> dims.last()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Activations cached by a forward pass: `activations[0]` is the input,
/// `activations[l]` the output of layer `l` (post-ReLU for hidden
/// layers, raw for the last).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("forward cache has layers")
    }
}

/// Parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub layers: Vec<Dense>,
}

impl MlpGradients {
    pub fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w *= s;
            }
            for b in &mut layer.bias {
                *b *= s;
            }
        }
    }

    pub fn add(&mut self, other: &MlpGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

impl Mlp {
    /// He-style seeded initialization: `N(0, sqrt(2/fan_in))` for layers
    /// feeding a ReLU, `N(0, sqrt(1/fan_in))` for the final linear layer.
    /// Biases start at zero.
    pub fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("network needs at least input and output dims"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::config("layer dimensions must be positive"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let last = l == dims.len() - 2;
            let std = if last {
                (1.0 / fan_in as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("valid normal");
            let mut layer = Dense::zeros(fan_in, fan_out);
            for w in &mut layer.weights {
                *w = normal.sample(rng);
            }
            layers.push(layer);
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn from_layers(dims: Vec<usize>, layers: Vec<Dense>) -> Result<Self> {
        if dims.len() != layers.len() + 1 {
            return Err(Error::data("layer count does not match dimension list"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.in_dim != dims[l]
                || layer.out_dim != dims[l + 1]
                || layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::data(format!("layer {l} has inconsistent shape")));
            }
        }
        Ok(Mlp { dims, layers })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims non-empty")
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::data(format!(
                "input has dimension {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = &activations[l];
            let last = l == self.layers.len() - 1;
            let mut out = Vec::with_capacity(layer.out_dim);
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut z = layer.bias[o];
                for (w, x) in row.iter().zip(prev.iter()) {
                    z += w * x;
                }
                out.push(if last { z } else { z.max(0.0) });
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Backpropagate `d_output` (gradient w.r.t. the final linear
    /// output), accumulating parameter gradients into `grads` and
    /// returning the gradient w.r.t. the input.
    ///
    /// ReLU subgradient at exactly zero is taken as zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
        grads: &mut MlpGradients,
    ) -> Vec<f64> {
        let mut delta = d_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.activations[l];
            let output = &cache.activations[l + 1];
            let last = l == self.layers.len() - 1;
            if !last {
                // Hidden activations are post-ReLU: zero means the unit
                // was clamped (or sat exactly on the kink).
                for (d, &a) in delta.iter_mut().zip(output.iter()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grads.layers[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, &x) in row.iter_mut().zip(input.iter()) {
                        *gw += d * x;
                    }
                }
                g.bias[o] += d;
            }
            let mut prev_delta = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d != 0.0 {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (pd, &w) in prev_delta.iter_mut().zip(row.iter()) {
                        *pd += w * d;
                    }
                }
            }
            delta = prev_delta;
        }
        delta
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        MlpGradients {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn sgd_step(&mut self, grads: &MlpGradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::data("flat parameter vector has wrong length"));
        }
        let mut pos = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    pub fn flatten_gradients(grads: &MlpGradients) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &grads.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}
