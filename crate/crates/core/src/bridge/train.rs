//! Denoising objective and bridge training loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bridge::{make_schedule, BridgeSchedule, NoisePredictorParams};
use crate::data::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::nn::MlpGradients;
use crate::seed::stage_rng;

/// One training pair: `x0` is the SAR latent, `y` the paired optical
/// latent of the same identity.
#[derive(Debug, Clone)]
pub struct LatentPair {
    pub x0: Vec<f64>,
    pub y: Vec<f64>,
}

/// Pre-drawn randomness for one pair, so finite-difference checks can
/// evaluate the loss repeatedly on identical draws.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Draw `(t, eps)` for each pair with `t` uniform on `{1..T-1}`.
pub fn draw_noise(
    pairs: &[LatentPair],
    schedule: &BridgeSchedule,
    rng: &mut ChaCha8Rng,
) -> Vec<NoiseDraw> {
    pairs
        .iter()
        .map(|p| {
            let t = rng.random_range(1..schedule.t_max());
            let eps = (0..p.x0.len()).map(|_| StandardNormal.sample(rng)).collect();
            NoiseDraw { t, eps }
        })
        .collect()
}

/// Mean over the minibatch of `||eps - eps_hat(x_t, t, y)||^2`, with its
/// exact parameter gradient, on caller-supplied draws.
pub fn diffusion_loss_with_draws(
    predictor: &NoisePredictorParams,
    pairs: &[LatentPair],
    schedule: &BridgeSchedule,
    draws: &[NoiseDraw],
) -> Result<(f64, MlpGradients)> {
    if pairs.is_empty() {
        return Err(Error::data("diffusion loss needs at least one pair"));
    }
    if pairs.len() != draws.len() {
        return Err(Error::data("pairs and noise draws differ in length"));
    }
    let n = pairs.len() as f64;
    let mut grads = predictor.zero_gradients();
    let mut loss = 0.0;
    for (pair, draw) in pairs.iter().zip(draws) {
        let m = schedule.m(draw.t);
        let sd = schedule.delta(draw.t).sqrt();
        if pair.x0.len() != pair.y.len() || pair.x0.len() != draw.eps.len() {
            return Err(Error::data("latent pair dimensions are inconsistent"));
        }
        let x_t: Vec<f64> = pair
            .x0
            .iter()
            .zip(&pair.y)
            .zip(&draw.eps)
            .map(|((&a, &b), &e)| (1.0 - m) * a + m * b + sd * e)
            .collect();
        let (cache, eps_hat) = predictor.forward_eps(&x_t, &pair.y, draw.t)?;
        // d loss / d net output, chained through the noise readout
        // (d eps_hat / d net = -(1-m)/sd).
        let mut d_net = Vec::with_capacity(eps_hat.len());
        for (&eh, &e) in eps_hat.iter().zip(&draw.eps) {
            let diff = eh - e;
            loss += diff * diff / n;
            d_net.push(2.0 * diff / n * (-(1.0 - m) / sd));
        }
        predictor.net().backward(&cache, &d_net, &mut grads);
    }
    if !loss.is_finite() {
        return Err(Error::numeric("diffusion loss is not finite"));
    }
    Ok((loss, grads))
}

/// Denoising objective with internally drawn `(t, eps)` per pair.
pub fn diffusion_loss(
    predictor: &NoisePredictorParams,
    pairs: &[LatentPair],
    schedule: &BridgeSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, MlpGradients)> {
    let draws = draw_noise(pairs, schedule, rng);
    diffusion_loss_with_draws(predictor, pairs, schedule, &draws)
}

/// Loss value only, for any predictor (including test oracles).
pub fn diffusion_loss_value<P: crate::bridge::NoisePredictor + ?Sized>(
    predictor: &P,
    pairs: &[LatentPair],
    schedule: &BridgeSchedule,
    draws: &[NoiseDraw],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::data("diffusion loss needs at least one pair"));
    }
    if pairs.len() != draws.len() {
        return Err(Error::data("pairs and noise draws differ in length"));
    }
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    for (pair, draw) in pairs.iter().zip(draws) {
        let m = schedule.m(draw.t);
        let sd = schedule.delta(draw.t).sqrt();
        let x_t: Vec<f64> = pair
            .x0
            .iter()
            .zip(&pair.y)
            .zip(&draw.eps)
            .map(|((&a, &b), &e)| (1.0 - m) * a + m * b + sd * e)
            .collect();
        let eps_hat = predictor.predict(&x_t, &pair.y, draw.t)?;
        for (&eh, &e) in eps_hat.iter().zip(&draw.eps) {
            let diff = eh - e;
            loss += diff * diff / n;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct BridgeSettings {
    pub t_max: usize,
    pub hidden: usize,
    pub time_embed_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BridgeSettings {
    fn default() -> Self {
        BridgeSettings {
            t_max: 1000,
            hidden: 128,
            time_embed_dim: 16,
            epochs: 60,
            learning_rate: 1e-3,
            batch_size: 16,
            seed: 7,
        }
    }
}

impl BridgeSettings {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("bridge training needs at least one epoch"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config("bridge learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("bridge batch size must be positive"));
        }
        Ok(())
    }
}

/// Identity-paired latents: every optical image pairs with a SAR image
/// of the same identity, cycling through the SAR pool in index order.
/// Identities lacking either modality contribute nothing.
pub fn build_latent_pairs(data: &Dataset) -> Vec<LatentPair> {
    let mut pairs = Vec::new();
    for identity in data.dual_modality_identities() {
        let optical: Vec<&crate::data::LabeledImage> = data
            .images()
            .iter()
            .filter(|i| i.identity() == identity && i.modality() == Modality::Optical)
            .collect();
        let sar: Vec<&crate::data::LabeledImage> = data
            .images()
            .iter()
            .filter(|i| i.identity() == identity && i.modality() == Modality::Sar)
            .collect();
        for (k, opt) in optical.iter().enumerate() {
            let paired = sar[k % sar.len()];
            pairs.push(LatentPair {
                x0: paired.unit_pixels(),
                y: opt.unit_pixels(),
            });
        }
    }
    pairs
}

/// Train the noise predictor with SGD over shuffled minibatches.
/// Returns the predictor and the mean loss per epoch.
pub fn train_bridge(
    settings: &BridgeSettings,
    pairs: &[LatentPair],
) -> Result<(NoisePredictorParams, Vec<f64>)> {
    settings.validate()?;
    if pairs.is_empty() {
        return Err(Error::data("bridge training needs at least one latent pair"));
    }
    let latent_dim = pairs[0].x0.len();
    if pairs
        .iter()
        .any(|p| p.x0.len() != latent_dim || p.y.len() != latent_dim)
    {
        return Err(Error::data("latent pairs must share one dimension"));
    }
    let schedule = make_schedule(settings.t_max)?;
    let mut init_rng = stage_rng(settings.seed, "bridge-init");
    let mut predictor = NoisePredictorParams::init(
        latent_dim,
        settings.time_embed_dim,
        settings.hidden,
        settings.t_max,
        &mut init_rng,
    )?;

    let mut rng = stage_rng(settings.seed, "bridge-batches");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        // Fisher-Yates on the fixed stream keeps epochs reproducible.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(settings.batch_size) {
            let batch: Vec<LatentPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (loss, grads) = diffusion_loss(&predictor, &batch, &schedule, &mut rng)?;
            predictor.net_mut().sgd_step(&grads, settings.learning_rate);
            if !predictor.net().all_finite() {
                return Err(Error::numeric(format!(
                    "bridge parameters became non-finite at epoch {epoch}"
                )));
            }
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok((predictor, history))
}
