//! Brownian-bridge diffusion between paired modality latents.
//!
//! The forward process pins `x_0` (a SAR latent) to `y` (its paired
//! optical latent): `x_t = (1 - m_t) x_0 + m_t y + sqrt(delta_t) eps`
//! with `m_t = t/T` and `delta_t = 2 (m_t - m_t^2)`.

mod predictor;
mod train;

pub use predictor::{time_embedding, NoisePredictorParams};
pub use train::{
    build_latent_pairs, diffusion_loss, diffusion_loss_value, diffusion_loss_with_draws,
    draw_noise, train_bridge, BridgeSettings, LatentPair, NoiseDraw,
};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{LabeledImage, Modality};
use crate::error::{Error, Result};
use crate::seed::indexed_rng;

/// Anything that can estimate the forward noise from the corrupted
/// state, the condition, and the step. Implemented by the trained
/// network and by test oracles.
pub trait NoisePredictor {
    fn latent_dim(&self) -> usize;
    fn t_max(&self) -> usize;
    fn predict(&self, x_t: &[f64], y: &[f64], t: usize) -> Result<Vec<f64>>;
}

/// Precomputed `m_t` and `delta_t` tables for `t in {0..T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSchedule {
    t_max: usize,
    m: Vec<f64>,
    delta: Vec<f64>,
}

/// Build the schedule for an even horizon `T >= 2`.
pub fn make_schedule(t_max: usize) -> Result<BridgeSchedule> {
    if t_max < 2 || t_max % 2 != 0 {
        return Err(Error::config(format!(
            "bridge horizon must be even and at least 2, got {t_max}"
        )));
    }
    let mut m = Vec::with_capacity(t_max + 1);
    let mut delta = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let mt = t as f64 / t_max as f64;
        m.push(mt);
        delta.push(2.0 * (mt - mt * mt));
    }
    Ok(BridgeSchedule { t_max, m, delta })
}

impl BridgeSchedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn m(&self, t: usize) -> f64 {
        self.m[t]
    }

    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }
}

/// Draw `x_t` and the noise used to produce it. At `t = 0` this returns
/// `x_0` exactly, at `t = T` it returns `y` exactly.
pub fn forward_sample(
    x0: &[f64],
    y: &[f64],
    t: usize,
    schedule: &BridgeSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x0.len() != y.len() {
        return Err(Error::data("bridge endpoints must share one dimension"));
    }
    if t > schedule.t_max() {
        return Err(Error::config(format!(
            "step {t} outside schedule horizon {}",
            schedule.t_max()
        )));
    }
    let m = schedule.m(t);
    let sd = schedule.delta(t).sqrt();
    let mut eps = Vec::with_capacity(x0.len());
    for _ in 0..x0.len() {
        eps.push(StandardNormal.sample(rng));
    }
    let x_t = x0
        .iter()
        .zip(y)
        .zip(&eps)
        .map(|((&a, &b), &e)| (1.0 - m) * a + m * b + sd * e)
        .collect();
    Ok((x_t, eps))
}

/// Invert the forward map given a noise estimate:
/// `x0_hat = (x_t - m_t y - sqrt(delta_t) eps_hat) / (1 - m_t)`.
/// Defined for `t < T` only.
pub fn reconstruct_x0(
    x_t: &[f64],
    y: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &BridgeSchedule,
) -> Result<Vec<f64>> {
    if t >= schedule.t_max() {
        return Err(Error::numeric(
            "x0 reconstruction is undefined at the t = T endpoint",
        ));
    }
    if x_t.len() != y.len() || x_t.len() != eps_hat.len() {
        return Err(Error::data("reconstruction inputs must share one dimension"));
    }
    let m = schedule.m(t);
    let sd = schedule.delta(t).sqrt();
    Ok(x_t
        .iter()
        .zip(y)
        .zip(eps_hat)
        .map(|((&xt, &b), &e)| (xt - m * b - sd * e) / (1.0 - m))
        .collect())
}

/// Deterministic-given-rng descent from `t = T` to `0` over `steps`
/// evenly spaced grid points.
///
/// The state starts at `y` exactly. The first move to `T - T/steps`
/// draws the only fresh noise of the run (with `x0_hat` initialized to
/// `y`, predictor-free). Every later step asks the predictor for
/// `eps_hat`, reconstructs `x0_hat`, and advances by re-noising with the
/// same `eps_hat` (noise-reuse; no per-step posterior variance).
pub fn generate<P: NoisePredictor + ?Sized>(
    predictor: &P,
    y: &[f64],
    schedule: &BridgeSchedule,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let t_max = schedule.t_max();
    if steps == 0 || t_max % steps != 0 {
        return Err(Error::config(format!(
            "sampler steps ({steps}) must divide the horizon ({t_max})"
        )));
    }
    if predictor.t_max() != t_max {
        return Err(Error::config(
            "predictor and schedule were built for different horizons",
        ));
    }
    if y.len() != predictor.latent_dim() {
        return Err(Error::data("condition dimension does not match predictor"));
    }
    let stride = t_max / steps;

    // First grid point below T: x = (1-m) y + m y + sqrt(delta) eps_init.
    let t_first = t_max - stride;
    let sd_first = schedule.delta(t_first).sqrt();
    let mut x: Vec<f64> = y
        .iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(rng);
            v + sd_first * e
        })
        .collect();

    let mut t = t_first;
    while t > 0 {
        let eps_hat = predictor.predict(&x, y, t)?;
        let x0_hat = reconstruct_x0(&x, y, t, &eps_hat, schedule)?;
        let t_next = t - stride;
        let m_next = schedule.m(t_next);
        let sd_next = schedule.delta(t_next).sqrt();
        for k in 0..x.len() {
            x[k] = (1.0 - m_next) * x0_hat[k] + m_next * y[k] + sd_next * eps_hat[k];
        }
        t = t_next;
    }
    Ok(x)
}

/// Generate `k` pseudo-SAR images from an optical image, one
/// independent noise stream per sample. Latents are the `[0,1]`-scaled
/// pixels; outputs are rescaled to `[0,255]` and clipped, with the
/// identity preserved and the modality set to SAR.
pub fn generate_pseudo_set(
    predictor: &NoisePredictorParams,
    optical: &LabeledImage,
    k: usize,
    schedule: &BridgeSchedule,
    steps: usize,
    seed: u64,
) -> Result<Vec<LabeledImage>> {
    if k == 0 {
        return Err(Error::config("pseudo-sample count must be at least 1"));
    }
    if optical.modality() != Modality::Optical {
        return Err(Error::data("pseudo-SAR generation conditions on an optical image"));
    }
    let y = optical.unit_pixels();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut rng = indexed_rng(seed, "bridge-pseudo", i as u64);
        let latent = generate(predictor, &y, schedule, steps, &mut rng)?;
        let pixels = latent
            .iter()
            .map(|&v| (v * 255.0).clamp(0.0, 255.0))
            .collect();
        out.push(LabeledImage::new(
            optical.width(),
            optical.height(),
            pixels,
            optical.identity(),
            Modality::Sar,
        )?);
    }
    Ok(out)
}
