//! Noise predictor: a small dense network over
//! `[x_t, y, sinusoidal time embedding]`.
//!
//! The network regresses a state estimate internally and the noise
//! estimate is read out through the forward map:
//! `eps_hat = (x_t - m_t y - (1 - m_t) net(x_t, y, t)) / sqrt(delta_t)`.
//! With a plain eps head, the component of the noise that carries any
//! state information has weight `(1-m_t)/sqrt(delta_t)` in the target
//! and drowns at small sample counts; this readout makes the entire
//! regression target the state itself while keeping the predictor's
//! external contract (inputs `(x_t, t, y)`, output `eps_hat`).

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{Dense, ForwardCache, Mlp, MlpGradients};

const BRIDGE_MAGIC: &[u8; 4] = b"MOSB";
const BRIDGE_VERSION: u32 = 1;

/// Sinusoidal features of `t/t_max`: `dim/2` (sin, cos) pairs on a
/// geometric frequency ladder starting at pi.
pub fn time_embedding(t: usize, t_max: usize, dim: usize) -> Vec<f64> {
    debug_assert!(dim % 2 == 0, "time embedding dimension must be even");
    let u = t as f64 / t_max as f64;
    let mut emb = Vec::with_capacity(dim);
    let mut freq = std::f64::consts::PI;
    for _ in 0..dim / 2 {
        emb.push((freq * u).sin());
        emb.push((freq * u).cos());
        freq *= 2.0;
    }
    emb
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictorParams {
    latent_dim: usize,
    time_dim: usize,
    t_max: usize,
    net: Mlp,
}

impl NoisePredictorParams {
    pub fn init(
        latent_dim: usize,
        time_dim: usize,
        hidden: usize,
        t_max: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if time_dim == 0 || time_dim % 2 != 0 {
            return Err(Error::config("time embedding dimension must be even and positive"));
        }
        let input = 2 * latent_dim + time_dim;
        Ok(NoisePredictorParams {
            latent_dim,
            time_dim,
            t_max,
            net: Mlp::init(&[input, hidden, hidden, latent_dim], rng)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub(crate) fn assemble_input(&self, x_t: &[f64], y: &[f64], t: usize) -> Result<Vec<f64>> {
        if x_t.len() != self.latent_dim || y.len() != self.latent_dim {
            return Err(Error::data(format!(
                "predictor expects latents of dimension {}, got {} and {}",
                self.latent_dim,
                x_t.len(),
                y.len()
            )));
        }
        // The noise readout divides by sqrt(delta_t), which vanishes at
        // both endpoints where the state carries no noise information.
        if t == 0 || t >= self.t_max {
            return Err(Error::config(format!(
                "predictor is defined for 0 < t < {}, got {t}",
                self.t_max
            )));
        }
        let mut input = Vec::with_capacity(2 * self.latent_dim + self.time_dim);
        input.extend_from_slice(x_t);
        input.extend_from_slice(y);
        input.extend(time_embedding(t, self.t_max, self.time_dim));
        Ok(input)
    }

    pub(crate) fn mixing(&self, t: usize) -> (f64, f64) {
        let m = t as f64 / self.t_max as f64;
        (m, (2.0 * (m - m * m)).sqrt())
    }

    /// Forward pass returning the network cache (the internal state
    /// estimate) plus the noise read out through the forward map.
    pub(crate) fn forward_eps(
        &self,
        x_t: &[f64],
        y: &[f64],
        t: usize,
    ) -> Result<(ForwardCache, Vec<f64>)> {
        let input = self.assemble_input(x_t, y, t)?;
        let cache = self.net.forward(&input)?;
        let (m, sd) = self.mixing(t);
        let eps_hat = x_t
            .iter()
            .zip(y)
            .zip(cache.output())
            .map(|((&xt, &yv), &x0)| (xt - m * yv - (1.0 - m) * x0) / sd)
            .collect();
        Ok((cache, eps_hat))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.magic(BRIDGE_MAGIC);
        w.u32(BRIDGE_VERSION);
        w.u32(self.latent_dim as u32);
        w.u32(self.time_dim as u32);
        w.u32(self.t_max as u32);
        let dims = self.net.dims();
        w.u32(dims.len() as u32);
        for d in dims {
            w.u32(*d as u32);
        }
        for layer in self.net.layers() {
            w.f64_slice(&layer.weights);
            w.f64_slice(&layer.bias);
        }
        std::fs::write(path, w.into_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(&bytes, "bridge model");
        r.magic(BRIDGE_MAGIC)?;
        let version = r.u32()?;
        if version != BRIDGE_VERSION {
            return Err(Error::data(format!("bridge model version {version} unsupported")));
        }
        let latent_dim = r.u32()? as usize;
        let time_dim = r.u32()? as usize;
        let t_max = r.u32()? as usize;
        let ndims = r.u32()? as usize;
        if ndims < 2 {
            return Err(Error::data("bridge model dimension list too short"));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32()? as usize);
        }
        if dims[0] != 2 * latent_dim + time_dim || *dims.last().unwrap() != latent_dim {
            return Err(Error::data("bridge model dimensions are inconsistent"));
        }
        let mut layers = Vec::with_capacity(ndims - 1);
        for l in 0..ndims - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let weights = r.f64_vec(fan_in * fan_out)?;
            let bias = r.f64_vec(fan_out)?;
            layers.push(Dense {
                weights,
                bias,
                in_dim: fan_in,
                out_dim: fan_out,
            });
        }
        r.finish()?;
        let net = Mlp::from_layers(dims, layers)?;
        if !net.all_finite() {
            return Err(Error::numeric("bridge model contains non-finite weights"));
        }
        Ok(NoisePredictorParams {
            latent_dim,
            time_dim,
            t_max,
            net,
        })
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        self.net.zero_gradients()
    }
}

impl crate::bridge::NoisePredictor for NoisePredictorParams {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn t_max(&self) -> usize {
        self.t_max
    }

    fn predict(&self, x_t: &[f64], y: &[f64], t: usize) -> Result<Vec<f64>> {
        Ok(self.forward_eps(x_t, y, t)?.1)
    }
}
