//! Embedder training loop: plain SGD over identity-balanced batches.

use crate::align::{centroid_gap, class_statistics, Feature};
use crate::data::{sample_balanced_batch, Dataset, LabeledImage};
use crate::denoise::DenoiseConfig;
use crate::embed::{total_loss, ClassIndex, EmbedderParams, LossWeights};
use crate::error::{Error, Result};
use crate::seed::stage_rng;

use rand::Rng;

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub instances_per_identity: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub embed_dim: usize,
    pub weights: LossWeights,
    /// `Some` routes every SAR image through the denoiser before training.
    pub denoise: Option<DenoiseConfig>,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 30,
            learning_rate: 5e-4,
            batch_size: 32,
            instances_per_identity: 4,
            hidden1: 128,
            hidden2: 64,
            embed_dim: 16,
            weights: LossWeights::default(),
            denoise: Some(DenoiseConfig::default()),
            flip_horizontal: false,
            flip_vertical: false,
            seed: 7,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if let Some(cfg) = &self.denoise {
            cfg.validate()?;
        }
        if self.epochs == 0 {
            return Err(Error::config("training needs at least one epoch"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.instances_per_identity < 2 {
            return Err(Error::config(
                "instances per identity must be at least 2 for triplet mining",
            ));
        }
        if self.batch_size < 2 * self.instances_per_identity {
            return Err(Error::config(
                "batch size must cover at least 2 identities",
            ));
        }
        Ok(())
    }

    fn identities_per_batch(&self) -> usize {
        self.batch_size / self.instances_per_identity
    }
}

/// Per-epoch record: mean loss components over the epoch's steps plus
/// the class-centroid modality-gap diagnostic measured after the epoch.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub id: f64,
    pub triplet: f64,
    pub cmal: f64,
    pub centroid_gap: f64,
}

fn apply_flips(
    image: LabeledImage,
    horizontal: bool,
    vertical: bool,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> LabeledImage {
    let mut out = image;
    if horizontal && rng.random_range(0.0..1.0) < 0.5 {
        out = out.flipped_horizontal();
    }
    if vertical && rng.random_range(0.0..1.0) < 0.5 {
        out = out.flipped_vertical();
    }
    out
}

/// Embed the whole dataset and compute the centroid-gap diagnostic.
fn epoch_diagnostic(params: &EmbedderParams, data: &Dataset) -> Result<f64> {
    let mut features = Vec::with_capacity(data.len());
    for img in data.images() {
        let vector = params.embed_image(img)?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("embedding became non-finite during training"));
        }
        features.push(Feature {
            vector,
            identity: img.identity(),
            modality: img.modality(),
        });
    }
    Ok(centroid_gap(&class_statistics(&features)?))
}

/// Train the embedder. Deterministic for a fixed seed: all randomness
/// (init, batch sampling, flips) derives from `settings.seed`.
pub fn train(settings: &TrainSettings, data: &Dataset) -> Result<(EmbedderParams, Vec<EpochStats>)> {
    settings.validate()?;
    let view = match &settings.denoise {
        Some(cfg) => data.denoise_sar(cfg)?,
        None => data.clone(),
    };

    let first = &view.images()[0];
    let input_dim = first.width() * first.height();
    if view
        .images()
        .iter()
        .any(|i| i.width() * i.height() != input_dim)
    {
        return Err(Error::data("all training images must share one size"));
    }

    let classes = ClassIndex::from_identities(view.images().iter().map(|i| i.identity()));
    if classes.len() < 2 {
        return Err(Error::data("training needs at least 2 identities"));
    }

    let mut init_rng = stage_rng(settings.seed, "embedder-init");
    let mut params = EmbedderParams::init(
        input_dim,
        settings.hidden1,
        settings.hidden2,
        settings.embed_dim,
        classes.len(),
        &mut init_rng,
    )?;

    let mut batch_rng = stage_rng(settings.seed, "embedder-batches");
    let mut flip_rng = stage_rng(settings.seed, "embedder-flips");
    let steps_per_epoch = view.len().div_ceil(settings.batch_size).max(1);

    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..steps_per_epoch {
            let batch = sample_balanced_batch(
                &view,
                settings.identities_per_batch(),
                settings.instances_per_identity,
                &mut batch_rng,
            )?;
            let batch = if settings.flip_horizontal || settings.flip_vertical {
                batch.map_images(|img| {
                    apply_flips(
                        img,
                        settings.flip_horizontal,
                        settings.flip_vertical,
                        &mut flip_rng,
                    )
                })
            } else {
                batch
            };
            let result = total_loss(&params, &batch, &classes, &settings.weights)?;
            sums.0 += result.total;
            sums.1 += result.id;
            sums.2 += result.triplet;
            sums.3 += result.cmal;
            params.sgd_step(&result.gradients, settings.learning_rate);
            if !params.all_finite() {
                return Err(Error::numeric(format!(
                    "parameters became non-finite at epoch {epoch}"
                )));
            }
        }
        let n = steps_per_epoch as f64;
        history.push(EpochStats {
            epoch,
            total: sums.0 / n,
            id: sums.1 / n,
            triplet: sums.2 / n,
            cmal: sums.3 / n,
            centroid_gap: epoch_diagnostic(&params, &view)?,
        });
    }
    Ok((params, history))
}
