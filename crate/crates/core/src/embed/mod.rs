//! Embedding network, losses, combined objective, and training loop.

mod losses;
mod train;

pub use losses::{id_loss, id_loss_with_grad, triplet_loss_batch_hard, TripletResult};
pub use train::{train, EpochStats, TrainSettings};

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::align::{cmal_loss_and_gradient, Feature};
use crate::binio::{Reader, Writer};
use crate::data::{Batch, LabeledImage};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGradients};

const MODEL_MAGIC: &[u8; 4] = b"MOSM";
const MODEL_VERSION: u32 = 1;

/// Loss term weights for the combined objective
/// `L = lambda_id L_ID + lambda_tri L_Triplet + lambda_cmal L_CMAL`.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_id: f64,
    pub lambda_tri: f64,
    pub lambda_cmal: f64,
    pub triplet_margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_id: 1.0,
            lambda_tri: 1.0,
            lambda_cmal: 2.0,
            triplet_margin: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.lambda_id,
            self.lambda_tri,
            self.lambda_cmal,
            self.triplet_margin,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Maps raw identity labels onto contiguous class indices for the
/// classification head.
#[derive(Debug, Clone)]
pub struct ClassIndex {
    map: BTreeMap<u32, usize>,
}

impl ClassIndex {
    pub fn from_identities(ids: impl IntoIterator<Item = u32>) -> Self {
        let unique: std::collections::BTreeSet<u32> = ids.into_iter().collect();
        ClassIndex {
            map: unique.into_iter().enumerate().map(|(i, id)| (id, i)).collect(),
        }
    }

    pub fn index_of(&self, identity: u32) -> Option<usize> {
        self.map.get(&identity).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// The embedding network: flattened `[0,1]` pixels through two ReLU
/// hidden layers to a linear d-dimensional embedding, plus a linear
/// classification head used only by the ID loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    trunk: Mlp,
    head: Mlp,
}

impl EmbedderParams {
    pub fn init(
        input_dim: usize,
        hidden1: usize,
        hidden2: usize,
        embed_dim: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if embed_dim < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        if num_classes < 2 {
            return Err(Error::config("classification head needs at least 2 classes"));
        }
        Ok(EmbedderParams {
            trunk: Mlp::init(&[input_dim, hidden1, hidden2, embed_dim], rng)?,
            head: Mlp::init(&[embed_dim, num_classes], rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    /// Embed one image: scale intensities to `[0,1]`, run the trunk.
    pub fn embed_image(&self, image: &LabeledImage) -> Result<Vec<f64>> {
        let input = image.unit_pixels();
        Ok(self.trunk.forward(&input)?.output().to_vec())
    }

    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        Ok(self.head.forward(embedding)?.output().to_vec())
    }

    pub fn all_finite(&self) -> bool {
        self.trunk.all_finite() && self.head.all_finite()
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.head.param_count()
    }

    /// All parameters, trunk then head, for finite-difference checks.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = self.trunk.flatten();
        flat.extend(self.head.flatten());
        flat
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::data("flat parameter vector has wrong length"));
        }
        let split = self.trunk.param_count();
        self.trunk.assign_flat(&flat[..split])?;
        self.head.assign_flat(&flat[split..])
    }

    pub fn sgd_step(&mut self, grads: &EmbedderGradients, lr: f64) {
        self.trunk.sgd_step(&grads.trunk, lr);
        self.head.sgd_step(&grads.head, lr);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.magic(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        let mut dims: Vec<usize> = self.trunk.dims().to_vec();
        dims.push(self.head.output_dim());
        w.u32(dims.len() as u32);
        for d in &dims {
            w.u32(*d as u32);
        }
        for layer in self.trunk.layers().iter().chain(self.head.layers()) {
            w.f64_slice(&layer.weights);
            w.f64_slice(&layer.bias);
        }
        std::fs::write(path, w.into_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(&bytes, "embedder model");
        r.magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::data(format!(
                "embedder model version {version} unsupported"
            )));
        }
        let ndims = r.u32()? as usize;
        if ndims != 5 {
            return Err(Error::data(format!(
                "embedder model must list 5 dimensions, found {ndims}"
            )));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32()? as usize);
        }
        let mut layers = Vec::with_capacity(ndims - 1);
        for l in 0..ndims - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let weights = r.f64_vec(fan_in * fan_out)?;
            let bias = r.f64_vec(fan_out)?;
            layers.push(crate::nn::Dense {
                weights,
                bias,
                in_dim: fan_in,
                out_dim: fan_out,
            });
        }
        r.finish()?;
        let head_layer = layers.pop().expect("five dims give four layers");
        let trunk = Mlp::from_layers(dims[..4].to_vec(), layers)?;
        let head = Mlp::from_layers(dims[3..].to_vec(), vec![head_layer])?;
        let params = EmbedderParams { trunk, head };
        if !params.all_finite() {
            return Err(Error::numeric("embedder model contains non-finite weights"));
        }
        Ok(params)
    }
}

/// Gradients for trunk and head together.
#[derive(Debug, Clone)]
pub struct EmbedderGradients {
    pub trunk: MlpGradients,
    pub head: MlpGradients,
}

/// Combined objective over one batch, with its exact parameter gradient.
#[derive(Debug)]
pub struct TotalLossResult {
    pub total: f64,
    pub id: f64,
    pub triplet: f64,
    pub cmal: f64,
    pub gradients: EmbedderGradients,
}

/// Weighted sum of ID cross-entropy, batch-hard triplet, and CMAL over
/// the batch's embeddings, with backpropagation through the shared
/// trunk. Loss terms whose weight is zero are skipped entirely and
/// reported as 0.
pub fn total_loss(
    params: &EmbedderParams,
    batch: &Batch,
    classes: &ClassIndex,
    weights: &LossWeights,
) -> Result<TotalLossResult> {
    weights.validate()?;
    let b = batch.len();
    let b_f = b as f64;

    let mut trunk_caches = Vec::with_capacity(b);
    let mut embeddings = Vec::with_capacity(b);
    for img in batch.images() {
        let cache = params.trunk.forward(&img.unit_pixels())?;
        embeddings.push(cache.output().to_vec());
        trunk_caches.push(cache);
    }

    let mut d_embeddings = vec![vec![0.0; params.embed_dim()]; b];
    let mut grads = EmbedderGradients {
        trunk: params.trunk.zero_gradients(),
        head: params.head.zero_gradients(),
    };

    let mut id_total = 0.0;
    if weights.lambda_id > 0.0 {
        for (i, img) in batch.images().iter().enumerate() {
            let label = classes.index_of(img.identity()).ok_or_else(|| {
                Error::data(format!(
                    "identity {} is not in the training class index",
                    img.identity()
                ))
            })?;
            let head_cache = params.head.forward(&embeddings[i])?;
            let (loss, mut d_logits) = id_loss_with_grad(head_cache.output(), label)?;
            id_total += loss / b_f;
            for d in &mut d_logits {
                *d *= weights.lambda_id / b_f;
            }
            let d_embed = params.head.backward(&head_cache, &d_logits, &mut grads.head);
            for (acc, d) in d_embeddings[i].iter_mut().zip(d_embed) {
                *acc += d;
            }
        }
    }

    let mut triplet_total = 0.0;
    if weights.lambda_tri > 0.0 {
        let ids: Vec<u32> = batch.images().iter().map(|i| i.identity()).collect();
        let result = triplet_loss_batch_hard(&embeddings, &ids, weights.triplet_margin)?;
        triplet_total = result.value;
        for (acc, g) in d_embeddings.iter_mut().zip(result.gradients) {
            for (a, gv) in acc.iter_mut().zip(g) {
                *a += weights.lambda_tri * gv;
            }
        }
    }

    let mut cmal_total = 0.0;
    if weights.lambda_cmal > 0.0 {
        let features: Vec<Feature> = batch
            .images()
            .iter()
            .zip(&embeddings)
            .map(|(img, e)| Feature {
                vector: e.clone(),
                identity: img.identity(),
                modality: img.modality(),
            })
            .collect();
        let (loss, feature_grads) = cmal_loss_and_gradient(&features)?;
        cmal_total = loss;
        for (acc, g) in d_embeddings.iter_mut().zip(feature_grads) {
            for (a, gv) in acc.iter_mut().zip(g) {
                *a += weights.lambda_cmal * gv;
            }
        }
    }

    for (cache, d_embed) in trunk_caches.iter().zip(&d_embeddings) {
        params.trunk.backward(cache, d_embed, &mut grads.trunk);
    }

    let total = weights.lambda_id * id_total
        + weights.lambda_tri * triplet_total
        + weights.lambda_cmal * cmal_total;
    if !total.is_finite() {
        return Err(Error::numeric(format!(
            "combined loss is not finite (id={id_total}, triplet={triplet_total}, cmal={cmal_total})"
        )));
    }
    Ok(TotalLossResult {
        total,
        id: id_total,
        triplet: triplet_total,
        cmal: cmal_total,
        gradients: grads,
    })
}
