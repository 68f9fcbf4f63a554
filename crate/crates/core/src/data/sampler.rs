//! Identity-balanced cross-modality batch sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, LabeledImage};
use crate::error::{Error, Result};

/// A training batch. Always holds at least two distinct identities so
/// the triplet loss has negatives, and every identity covers both
/// modalities when the dataset allows it.
#[derive(Debug, Clone)]
pub struct Batch {
    images: Vec<LabeledImage>,
}

impl Batch {
    pub fn new(images: Vec<LabeledImage>) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::data("batch must hold at least 2 images"));
        }
        let first = images[0].identity();
        if images.iter().all(|i| i.identity() == first) {
            return Err(Error::data(
                "batch must hold at least 2 distinct identities",
            ));
        }
        Ok(Batch { images })
    }

    pub fn images(&self) -> &[LabeledImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn map_images(mut self, f: impl FnMut(LabeledImage) -> LabeledImage) -> Self {
        self.images = self.images.into_iter().map(f).collect();
        self
    }
}

/// Sample `identities_per_batch` x `instances_per_identity` images.
///
/// Every chosen identity has images in both modalities and contributes
/// at least one of each. Within an identity, instances are drawn without
/// replacement while the pool lasts, with replacement afterwards.
pub fn sample_balanced_batch(
    dataset: &Dataset,
    identities_per_batch: usize,
    instances_per_identity: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    if identities_per_batch == 0 || instances_per_identity == 0 {
        return Err(Error::config(
            "identities per batch and instances per identity must be positive",
        ));
    }
    if identities_per_batch < 2 {
        return Err(Error::config(
            "a batch needs at least 2 identities so every anchor has negatives",
        ));
    }
    if instances_per_identity < 2 {
        return Err(Error::config(
            "at least 2 instances per identity are needed to cover both modalities",
        ));
    }
    let dual = dataset.dual_modality_identities();
    if dual.len() < identities_per_batch {
        return Err(Error::data(format!(
            "need {} identities with both modalities, dataset has {}",
            identities_per_batch,
            dual.len()
        )));
    }

    let chosen = rand::seq::index::sample(rng, dual.len(), identities_per_batch);
    let mut images = Vec::with_capacity(identities_per_batch * instances_per_identity);
    for idx in chosen.iter() {
        let identity = dual[idx];
        let (optical, sar) = dataset
            .indices_for(identity)
            .expect("dual-modality identity is indexed");

        let opt_pick = optical[rng.random_range(0..optical.len())];
        let sar_pick = sar[rng.random_range(0..sar.len())];
        let mut picks = vec![opt_pick, sar_pick];

        let full_pool: Vec<usize> = optical.iter().chain(sar.iter()).copied().collect();
        let mut remaining: Vec<usize> = full_pool
            .iter()
            .copied()
            .filter(|&i| i != opt_pick && i != sar_pick)
            .collect();
        while picks.len() < instances_per_identity {
            if remaining.is_empty() {
                picks.push(full_pool[rng.random_range(0..full_pool.len())]);
            } else {
                picks.push(remaining.swap_remove(rng.random_range(0..remaining.len())));
            }
        }
        for i in picks {
            images.push(dataset.images()[i].clone());
        }
    }
    Batch::new(images)
}
