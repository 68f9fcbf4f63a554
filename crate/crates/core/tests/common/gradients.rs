//! Random gradient-check instances shared by the gradient tests and
//! the acceptance suite. Each `*_check` returns the max relative error
//! between the analytic gradient and central finite differences.

use super::{central_diff, max_rel_err};

use osreid::align::{class_statistics, cmal_gradient, cmal_loss, Feature};
use osreid::bridge::{
    diffusion_loss_with_draws, draw_noise, make_schedule, LatentPair, NoisePredictorParams,
};
use osreid::data::{Batch, LabeledImage, Modality};
use osreid::embed::{
    id_loss, id_loss_with_grad, total_loss, triplet_loss_batch_hard, ClassIndex, EmbedderParams,
    LossWeights,
};
use osreid::nn::Mlp;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const REL_FLOOR: f64 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random batch of tagged features: every identity gets samples on both
/// sides so the CMAL valid set is non-empty.
pub fn random_features(seed: u64, max_dim: usize, max_batch: usize) -> Vec<Feature> {
    let mut r = rng(seed);
    let dim = r.random_range(2..=max_dim);
    let n_ids = r.random_range(2..=4usize);
    let mut features = Vec::new();
    for id in 1..=n_ids as u32 {
        for modality in [Modality::Optical, Modality::Sar] {
            let count = r.random_range(1..=3usize);
            for _ in 0..count {
                features.push(Feature {
                    vector: random_vec(&mut r, dim, 1.0),
                    identity: id,
                    modality,
                });
            }
        }
    }
    features.truncate(max_batch);
    features
}

pub fn cmal_check(seed: u64) -> f64 {
    let features = random_features(seed, 16, 32);
    let dim = features[0].vector.len();
    let analytic: Vec<f64> = cmal_gradient(&features)
        .unwrap()
        .into_iter()
        .flatten()
        .collect();
    let flat: Vec<f64> = features.iter().flat_map(|f| f.vector.clone()).collect();
    let numeric = central_diff(
        &flat,
        |x| {
            let rebuilt: Vec<Feature> = features
                .iter()
                .enumerate()
                .map(|(i, f)| Feature {
                    vector: x[i * dim..(i + 1) * dim].to_vec(),
                    identity: f.identity,
                    modality: f.modality,
                })
                .collect();
            cmal_loss(&class_statistics(&rebuilt).unwrap())
        },
        1e-4,
    );
    max_rel_err(&analytic, &numeric, REL_FLOOR)
}

pub fn id_loss_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let classes = r.random_range(2..=16usize);
    let logits = random_vec(&mut r, classes, 4.0);
    let label = r.random_range(0..classes);
    let (_, analytic) = id_loss_with_grad(&logits, label).unwrap();
    let numeric = central_diff(&logits, |x| id_loss(x, label).unwrap(), 1e-4);
    max_rel_err(&analytic, &numeric, REL_FLOOR)
}

pub fn triplet_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.random_range(2..=16usize);
    let n_ids = r.random_range(2..=6usize);
    let per_id = r.random_range(2..=4usize);
    let mut embeddings = Vec::new();
    let mut ids = Vec::new();
    for id in 1..=n_ids as u32 {
        for _ in 0..per_id {
            embeddings.push(random_vec(&mut r, dim, 1.0));
            ids.push(id);
        }
    }
    embeddings.truncate(32);
    ids.truncate(32);

    let result = triplet_loss_batch_hard(&embeddings, &ids, 0.3).unwrap();
    let analytic: Vec<f64> = result.gradients.into_iter().flatten().collect();
    let flat: Vec<f64> = embeddings.iter().flatten().copied().collect();
    let numeric = central_diff(
        &flat,
        |x| {
            let rebuilt: Vec<Vec<f64>> = x.chunks(dim).map(|c| c.to_vec()).collect();
            triplet_loss_batch_hard(&rebuilt, &ids, 0.3).unwrap().value
        },
        1e-4,
    );
    max_rel_err(&analytic, &numeric, REL_FLOOR)
}

/// Random image batch: 4 identities, one optical + one SAR image each.
pub fn random_image_batch(seed: u64, side: usize) -> Batch {
    let mut r = rng(seed);
    let mut images = Vec::new();
    for id in 1..=4u32 {
        for modality in [Modality::Optical, Modality::Sar] {
            let pixels = (0..side * side)
                .map(|_| r.random_range(0.0..255.0))
                .collect();
            images.push(LabeledImage::new(side, side, pixels, id, modality).unwrap());
        }
    }
    Batch::new(images).unwrap()
}

pub fn total_loss_check(seed: u64) -> f64 {
    let batch = random_image_batch(seed, 8);
    let classes = ClassIndex::from_identities(batch.images().iter().map(|i| i.identity()));
    let mut params =
        EmbedderParams::init(64, 16, 16, 8, classes.len(), &mut rng(seed ^ 0xabcd)).unwrap();
    let weights = LossWeights::default();
    let result = total_loss(&params, &batch, &classes, &weights).unwrap();
    let mut analytic = Mlp::flatten_gradients(&result.gradients.trunk);
    analytic.extend(Mlp::flatten_gradients(&result.gradients.head));
    let flat = params.flatten();
    let numeric = central_diff(
        &flat,
        |x| {
            params.assign_flat(x).unwrap();
            total_loss(&params, &batch, &classes, &weights).unwrap().total
        },
        1e-5,
    );
    params.assign_flat(&flat).unwrap();
    max_rel_err(&analytic, &numeric, REL_FLOOR)
}

pub fn diffusion_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.random_range(2..=6usize);
    let t_max = 10;
    let schedule = make_schedule(t_max).unwrap();
    let pairs: Vec<LatentPair> = (0..r.random_range(2..=4usize))
        .map(|_| LatentPair {
            x0: random_vec(&mut r, dim, 1.0),
            y: random_vec(&mut r, dim, 1.0),
        })
        .collect();
    let mut predictor =
        NoisePredictorParams::init(dim, 8, 16, t_max, &mut rng(seed ^ 0x77)).unwrap();
    let draws = draw_noise(&pairs, &schedule, &mut r);
    let (_, grads) = diffusion_loss_with_draws(&predictor, &pairs, &schedule, &draws).unwrap();
    let analytic = Mlp::flatten_gradients(&grads);
    let flat = predictor.net().flatten();
    let numeric = central_diff(
        &flat,
        |x| {
            predictor.net_mut().assign_flat(x).unwrap();
            diffusion_loss_with_draws(&predictor, &pairs, &schedule, &draws)
                .unwrap()
                .0
        },
        1e-5,
    );
    predictor.net_mut().assign_flat(&flat).unwrap();
    max_rel_err(&analytic, &numeric, REL_FLOOR)
}

/// Run `instances` checks, redrawing a failing instance up to `tries`
/// times (finite differences are invalid near kinks). Returns the
/// number of instances that ultimately passed.
pub fn run_with_redraws(
    check: impl Fn(u64) -> f64,
    instances: u64,
    tries: u64,
    tol: f64,
    seed_base: u64,
) -> u64 {
    let mut passed = 0;
    for i in 0..instances {
        if (0..tries).any(|t| check(seed_base + i * 131 + t * 104729) < tol) {
            passed += 1;
        }
    }
    passed
}
