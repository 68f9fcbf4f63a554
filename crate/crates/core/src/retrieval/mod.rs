//! Feature fusion, distance computation, evaluation protocols, and
//! mAP / Rank-k metrics.

mod mose;

pub use mose::{read_embeddings, write_embeddings};

use serde::{Deserialize, Serialize};

use crate::bridge::{generate_pseudo_set, BridgeSchedule, NoisePredictorParams};
use crate::data::{LabeledImage, Modality};
use crate::embed::EmbedderParams;
use crate::error::{Error, Result};

/// Whether an embedding came straight from an image or from fusion
/// with generated pseudo-SAR features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Fused,
}

#[derive(Debug, Clone)]
pub struct EmbeddingRecord {
    pub vector: Vec<f64>,
    pub identity: u32,
    pub modality: Modality,
    pub source: Source,
}

/// Query/gallery modality filters for the three evaluation protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    AllToAll,
    OpticalToSar,
    SarToOptical,
}

impl Protocol {
    pub fn query_filter(&self) -> Option<Modality> {
        match self {
            Protocol::AllToAll => None,
            Protocol::OpticalToSar => Some(Modality::Optical),
            Protocol::SarToOptical => Some(Modality::Sar),
        }
    }

    pub fn gallery_filter(&self) -> Option<Modality> {
        match self {
            Protocol::AllToAll => None,
            Protocol::OpticalToSar => Some(Modality::Sar),
            Protocol::SarToOptical => Some(Modality::Optical),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" | "all-to-all" => Ok(Protocol::AllToAll),
            "o2s" | "optical-to-sar" => Ok(Protocol::OpticalToSar),
            "s2o" | "sar-to-optical" => Ok(Protocol::SarToOptical),
            other => Err(Error::config(format!("unknown protocol {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::AllToAll => "all",
            Protocol::OpticalToSar => "o2s",
            Protocol::SarToOptical => "s2o",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::config(format!("unknown metric {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

/// Result of fusing an optical feature with pseudo-SAR features.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub vector: Vec<f64>,
    /// Set when the combined vector's norm fell below epsilon; the
    /// vector is then all zero.
    pub degenerate: bool,
}

/// `v = (1 - tau) f_opt + tau * mean(pseudo)`, L2-normalized.
pub fn fuse(f_opt: &[f64], pseudo: &[Vec<f64>], tau: f64, epsilon: f64) -> Result<Fusion> {
    if pseudo.is_empty() {
        return Err(Error::data("fusion needs at least one pseudo feature"));
    }
    if !(0.0..=1.0).contains(&tau) || !tau.is_finite() {
        return Err(Error::config(format!("tau must lie in [0, 1], got {tau}")));
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::config("fusion epsilon must be positive"));
    }
    let d = f_opt.len();
    if pseudo.iter().any(|p| p.len() != d) {
        return Err(Error::data("pseudo features must match the optical dimension"));
    }
    let k = pseudo.len() as f64;
    let mut v = vec![0.0; d];
    for p in pseudo {
        for (acc, x) in v.iter_mut().zip(p) {
            *acc += x / k;
        }
    }
    for (acc, x) in v.iter_mut().zip(f_opt) {
        *acc = (1.0 - tau) * x + tau * *acc;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < epsilon {
        return Ok(Fusion {
            vector: vec![0.0; d],
            degenerate: true,
        });
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(Fusion {
        vector: v,
        degenerate: false,
    })
}

/// L2-normalize, mapping near-zero vectors to zero.
pub fn normalize(v: &[f64], epsilon: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < epsilon {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Distance matrix plus a count of zero-norm vectors hit under the
/// cosine metric.
#[derive(Debug, Clone)]
pub struct Distances {
    pub matrix: Vec<Vec<f64>>,
    pub zero_norm_count: usize,
}

/// `|Q| x |G|` distances. Cosine is `1 - dot/(|a||b|)` with
/// epsilon-guarded norms: a zero-norm vector sits at distance 1 from
/// everything and is counted in `zero_norm_count`.
pub fn pairwise_distances(
    queries: &[Vec<f64>],
    gallery: &[Vec<f64>],
    metric: Metric,
) -> Result<Distances> {
    if gallery.is_empty() {
        return Err(Error::data("distance computation needs a non-empty gallery"));
    }
    let dim = gallery[0].len();
    if queries.iter().chain(gallery).any(|v| v.len() != dim) {
        return Err(Error::data("query and gallery vectors must share one dimension"));
    }
    const NORM_EPS: f64 = 1e-12;
    let mut zero_norm = 0usize;
    let norms = |vs: &[Vec<f64>], zero: &mut usize| -> Vec<f64> {
        vs.iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n < NORM_EPS {
                    *zero += 1;
                }
                n.max(NORM_EPS)
            })
            .collect()
    };
    let matrix = match metric {
        Metric::Euclidean => queries
            .iter()
            .map(|q| {
                gallery
                    .iter()
                    .map(|g| {
                        q.iter()
                            .zip(g)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect(),
        Metric::Cosine => {
            let qn = norms(queries, &mut zero_norm);
            let gn = norms(gallery, &mut zero_norm);
            queries
                .iter()
                .zip(&qn)
                .map(|(q, &nq)| {
                    gallery
                        .iter()
                        .zip(&gn)
                        .map(|(g, &ng)| {
                            let dot: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
                            1.0 - dot / (nq * ng)
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(Distances {
        matrix,
        zero_norm_count: zero_norm,
    })
}

/// Flat metrics object; the JSON field names are the external contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R5")]
    pub r5: f64,
    #[serde(rename = "R10")]
    pub r10: f64,
    pub excluded_queries: usize,
}

/// Per-query ranking detail.
#[derive(Debug, Clone)]
pub struct RankedRetrieval {
    /// Index of the query in the caller's record list.
    pub query_index: usize,
    /// Gallery indices (into the caller's record list) by ascending
    /// distance, ties broken by ascending index.
    pub ranking: Vec<usize>,
    /// Relevance flag (same identity) per ranked position.
    pub relevance: Vec<bool>,
    pub average_precision: f64,
    /// 0-based position of the first relevant item.
    pub first_relevant_rank: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub per_query: Vec<RankedRetrieval>,
}

/// Full protocol evaluation: filter by modality, rank, and score.
///
/// Queries with no relevant gallery item after filtering are excluded
/// from the metrics and counted in `excluded_queries`.
pub fn evaluate(
    queries: &[EmbeddingRecord],
    gallery: &[EmbeddingRecord],
    protocol: Protocol,
    metric: Metric,
) -> Result<Evaluation> {
    let query_idx: Vec<usize> = (0..queries.len())
        .filter(|&i| {
            protocol
                .query_filter()
                .is_none_or(|m| queries[i].modality == m)
        })
        .collect();
    let gallery_idx: Vec<usize> = (0..gallery.len())
        .filter(|&i| {
            protocol
                .gallery_filter()
                .is_none_or(|m| gallery[i].modality == m)
        })
        .collect();
    if gallery_idx.is_empty() {
        return Err(Error::data("gallery is empty after protocol filtering"));
    }

    let q_vecs: Vec<Vec<f64>> = query_idx.iter().map(|&i| queries[i].vector.clone()).collect();
    let g_vecs: Vec<Vec<f64>> = gallery_idx.iter().map(|&i| gallery[i].vector.clone()).collect();
    let distances = pairwise_distances(&q_vecs, &g_vecs, metric)?;

    let mut per_query = Vec::new();
    let mut excluded = 0usize;
    let mut ap_sum = 0.0;
    let mut rank_hits = [0usize; 3]; // r1, r5, r10
    for (qi, &orig_q) in query_idx.iter().enumerate() {
        let identity = queries[orig_q].identity;
        let relevant_total = gallery_idx
            .iter()
            .filter(|&&g| gallery[g].identity == identity)
            .count();
        if relevant_total == 0 {
            excluded += 1;
            continue;
        }
        let mut order: Vec<usize> = (0..gallery_idx.len()).collect();
        order.sort_by(|&a, &b| {
            distances.matrix[qi][a]
                .total_cmp(&distances.matrix[qi][b])
                .then(gallery_idx[a].cmp(&gallery_idx[b]))
        });
        let mut seen = 0usize;
        let mut ap = 0.0;
        let mut first_rank = usize::MAX;
        let mut relevance = Vec::with_capacity(order.len());
        for (rank, &pos) in order.iter().enumerate() {
            let hit = gallery[gallery_idx[pos]].identity == identity;
            relevance.push(hit);
            if hit {
                seen += 1;
                ap += seen as f64 / (rank + 1) as f64;
                if first_rank == usize::MAX {
                    first_rank = rank;
                }
            }
        }
        ap /= relevant_total as f64;
        ap_sum += ap;
        for (slot, &k) in [1usize, 5, 10].iter().enumerate() {
            if first_rank < k {
                rank_hits[slot] += 1;
            }
        }
        per_query.push(RankedRetrieval {
            query_index: orig_q,
            ranking: order.iter().map(|&pos| gallery_idx[pos]).collect(),
            relevance,
            average_precision: ap,
            first_relevant_rank: first_rank,
        });
    }

    let kept = per_query.len();
    let denom = kept.max(1) as f64;
    Ok(Evaluation {
        metrics: Metrics {
            map: ap_sum / denom,
            r1: rank_hits[0] as f64 / denom,
            r5: rank_hits[1] as f64 / denom,
            r10: rank_hits[2] as f64 / denom,
            excluded_queries: excluded,
        },
        per_query,
    })
}

/// Turn images into Real embedding records, L2-normalized.
pub fn embed_records(
    params: &EmbedderParams,
    images: &[LabeledImage],
    epsilon: f64,
) -> Result<Vec<EmbeddingRecord>> {
    images
        .iter()
        .map(|img| {
            let raw = params.embed_image(img)?;
            Ok(EmbeddingRecord {
                vector: normalize(&raw, epsilon),
                identity: img.identity(),
                modality: img.modality(),
                source: Source::Real,
            })
        })
        .collect()
}

/// Settings for fused evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FusionSettings {
    pub tau: f64,
    pub k_pseudo: usize,
    pub sampler_steps: usize,
    pub epsilon: f64,
    pub seed: u64,
}

/// Per-image fusion input: either a finished SAR record or the raw
/// optical embedding with its pseudo-SAR embeddings, awaiting a tau.
#[derive(Debug, Clone)]
pub enum FusionInput {
    Sar(EmbeddingRecord),
    Optical {
        identity: u32,
        f_opt: Vec<f64>,
        pseudo: Vec<Vec<f64>>,
    },
}

/// Embed every image and generate pseudo-SAR embeddings for the optical
/// ones. `stream_offset` separates query and gallery noise streams.
pub fn fusion_inputs(
    params: &EmbedderParams,
    predictor: &NoisePredictorParams,
    schedule: &BridgeSchedule,
    images: &[LabeledImage],
    fusion: &FusionSettings,
    stream_offset: u64,
) -> Result<Vec<FusionInput>> {
    let mut inputs = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        match img.modality() {
            Modality::Sar => {
                let raw = params.embed_image(img)?;
                inputs.push(FusionInput::Sar(EmbeddingRecord {
                    vector: normalize(&raw, fusion.epsilon),
                    identity: img.identity(),
                    modality: Modality::Sar,
                    source: Source::Real,
                }));
            }
            Modality::Optical => {
                let pseudo_images = generate_pseudo_set(
                    predictor,
                    img,
                    fusion.k_pseudo,
                    schedule,
                    fusion.sampler_steps,
                    crate::seed::indexed_seed(fusion.seed, "fused-eval", stream_offset + i as u64),
                )?;
                let f_opt = params.embed_image(img)?;
                let mut pseudo = Vec::with_capacity(pseudo_images.len());
                for p in &pseudo_images {
                    pseudo.push(params.embed_image(p)?);
                }
                inputs.push(FusionInput::Optical {
                    identity: img.identity(),
                    f_opt,
                    pseudo,
                });
            }
        }
    }
    Ok(inputs)
}

/// Apply the tau-weighted fusion to precomputed inputs.
pub fn fuse_inputs(inputs: &[FusionInput], tau: f64, epsilon: f64) -> Result<Vec<EmbeddingRecord>> {
    inputs
        .iter()
        .map(|input| match input {
            FusionInput::Sar(record) => Ok(record.clone()),
            FusionInput::Optical {
                identity,
                f_opt,
                pseudo,
            } => {
                let fused = fuse(f_opt, pseudo, tau, epsilon)?;
                Ok(EmbeddingRecord {
                    vector: fused.vector,
                    identity: *identity,
                    modality: Modality::Optical,
                    source: Source::Fused,
                })
            }
        })
        .collect()
}

/// Build records where every optical image is replaced by the fusion of
/// its embedding with `k` generated pseudo-SAR embeddings; SAR images
/// keep their real (normalized) embeddings.
///
/// `stream_offset` separates the query and gallery noise streams.
pub fn fused_records(
    params: &EmbedderParams,
    predictor: &NoisePredictorParams,
    schedule: &BridgeSchedule,
    images: &[LabeledImage],
    fusion: &FusionSettings,
    stream_offset: u64,
) -> Result<Vec<EmbeddingRecord>> {
    let inputs = fusion_inputs(params, predictor, schedule, images, fusion, stream_offset)?;
    fuse_inputs(&inputs, fusion.tau, fusion.epsilon)
}

/// Fused evaluation end to end: optical images on both sides are
/// replaced by fused embeddings, SAR images by normalized real ones.
#[allow(clippy::too_many_arguments)]
pub fn fused_evaluate(
    params: &EmbedderParams,
    predictor: &NoisePredictorParams,
    schedule: &BridgeSchedule,
    query_images: &[LabeledImage],
    gallery_images: &[LabeledImage],
    protocol: Protocol,
    metric: Metric,
    fusion: &FusionSettings,
) -> Result<Evaluation> {
    let queries = fused_records(params, predictor, schedule, query_images, fusion, 0)?;
    let gallery = fused_records(
        params,
        predictor,
        schedule,
        gallery_images,
        fusion,
        query_images.len() as u64,
    )?;
    evaluate(&queries, &gallery, protocol, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(vector: Vec<f64>, identity: u32, modality: Modality) -> EmbeddingRecord {
        EmbeddingRecord {
            vector,
            identity,
            modality,
            source: Source::Real,
        }
    }

    #[test]
    fn fuse_tau_zero_is_normalized_optical() {
        let f = fuse(&[3.0, 4.0], &[vec![100.0, -50.0]], 0.0, 1e-6).unwrap();
        assert!(!f.degenerate);
        assert!((f.vector[0] - 0.6).abs() < 1e-12);
        assert!((f.vector[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fuse_hand_example() {
        let f = fuse(&[1.0, 0.0], &[vec![0.0, 1.0]], 0.5, 1e-6).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f.vector[0] - s).abs() < 1e-12);
        assert!((f.vector[1] - s).abs() < 1e-12);
    }

    #[test]
    fn fuse_unit_norm_unless_degenerate() {
        let f = fuse(&[0.3, -0.2, 0.9], &[vec![0.1, 0.4, -0.5], vec![0.0, 1.0, 0.0]], 0.2, 1e-6)
            .unwrap();
        let norm: f64 = f.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);

        let g = fuse(&[1.0, 0.0], &[vec![-1.0, 0.0]], 0.5, 1e-6).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.vector, vec![0.0, 0.0]);
    }

    #[test]
    fn fuse_rejects_bad_arguments() {
        assert!(fuse(&[1.0], &[], 0.2, 1e-6).is_err());
        assert!(fuse(&[1.0], &[vec![1.0, 2.0]], 0.2, 1e-6).is_err());
        assert!(fuse(&[1.0], &[vec![1.0]], 1.5, 1e-6).is_err());
    }

    #[test]
    fn distances_identity_and_orthogonality() {
        let v = vec![vec![1.0, 0.0]];
        let g = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let e = pairwise_distances(&v, &g, Metric::Euclidean).unwrap();
        assert_eq!(e.matrix[0][0], 0.0);
        assert!((e.matrix[0][1] - 2.0f64.sqrt()).abs() < 1e-12);
        let c = pairwise_distances(&v, &g, Metric::Cosine).unwrap();
        assert!(c.matrix[0][0].abs() < 1e-12);
        assert!((c.matrix[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_is_flagged_distance_one() {
        let q = vec![vec![0.0, 0.0]];
        let g = vec![vec![1.0, 0.0]];
        let d = pairwise_distances(&q, &g, Metric::Cosine).unwrap();
        assert_eq!(d.zero_norm_count, 1);
        assert!((d.matrix[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_average_precision() {
        // Ranked pattern (relevant, irrelevant, relevant):
        // AP = (1/1 + 2/3)/2 = 5/6, R1 = 1.
        let queries = vec![rec(vec![0.0, 0.0], 1, Modality::Optical)];
        let gallery = vec![
            rec(vec![1.0, 0.0], 1, Modality::Sar),
            rec(vec![2.0, 0.0], 2, Modality::Sar),
            rec(vec![3.0, 0.0], 1, Modality::Sar),
        ];
        let eval = evaluate(&queries, &gallery, Protocol::AllToAll, Metric::Euclidean).unwrap();
        assert!((eval.metrics.map - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(eval.metrics.r1, 1.0);
        assert_eq!(eval.per_query[0].relevance, vec![true, false, true]);
    }

    #[test]
    fn perfect_single_match() {
        let queries = vec![rec(vec![0.0], 1, Modality::Optical)];
        let gallery = vec![
            rec(vec![0.1], 1, Modality::Sar),
            rec(vec![5.0], 2, Modality::Sar),
            rec(vec![9.0], 3, Modality::Sar),
        ];
        let eval = evaluate(&queries, &gallery, Protocol::OpticalToSar, Metric::Euclidean).unwrap();
        assert_eq!(eval.metrics.map, 1.0);
        assert_eq!(eval.metrics.r1, 1.0);
        assert_eq!(eval.metrics.r5, 1.0);
        assert_eq!(eval.metrics.r10, 1.0);
    }

    #[test]
    fn protocol_filters_restrict_modalities() {
        let queries = vec![
            rec(vec![0.0], 1, Modality::Optical),
            rec(vec![0.0], 1, Modality::Sar),
        ];
        let gallery = vec![
            rec(vec![1.0], 1, Modality::Optical),
            rec(vec![2.0], 1, Modality::Sar),
        ];
        let o2s = evaluate(&queries, &gallery, Protocol::OpticalToSar, Metric::Euclidean).unwrap();
        assert_eq!(o2s.per_query.len(), 1);
        assert_eq!(o2s.per_query[0].query_index, 0);
        assert_eq!(o2s.per_query[0].ranking, vec![1]);
        let s2o = evaluate(&queries, &gallery, Protocol::SarToOptical, Metric::Euclidean).unwrap();
        assert_eq!(s2o.per_query[0].query_index, 1);
        assert_eq!(s2o.per_query[0].ranking, vec![0]);
    }

    #[test]
    fn query_without_relevant_gallery_is_excluded() {
        let queries = vec![
            rec(vec![0.0], 1, Modality::Optical),
            rec(vec![0.0], 9, Modality::Optical),
        ];
        let gallery = vec![rec(vec![1.0], 1, Modality::Sar)];
        let eval = evaluate(&queries, &gallery, Protocol::OpticalToSar, Metric::Euclidean).unwrap();
        assert_eq!(eval.metrics.excluded_queries, 1);
        assert_eq!(eval.per_query.len(), 1);
    }

    #[test]
    fn empty_filtered_gallery_is_an_error() {
        let queries = vec![rec(vec![0.0], 1, Modality::Optical)];
        let gallery = vec![rec(vec![1.0], 1, Modality::Optical)];
        assert!(evaluate(&queries, &gallery, Protocol::OpticalToSar, Metric::Euclidean).is_err());
    }

    #[test]
    fn distance_ties_break_by_gallery_index() {
        let queries = vec![rec(vec![0.0], 1, Modality::Optical)];
        let gallery = vec![
            rec(vec![1.0], 2, Modality::Sar),
            rec(vec![1.0], 1, Modality::Sar),
            rec(vec![-1.0], 1, Modality::Sar),
        ];
        let eval = evaluate(&queries, &gallery, Protocol::AllToAll, Metric::Euclidean).unwrap();
        assert_eq!(eval.per_query[0].ranking, vec![0, 1, 2]);
    }
}
