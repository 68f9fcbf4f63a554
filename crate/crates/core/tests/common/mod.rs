//! Shared test oracles: central finite differences and a brute-force
//! retrieval scorer, both kept independent of the library's own
//! computation paths.

#![allow(dead_code)]

pub mod gradients;

use osreid::data::Modality;
use osreid::retrieval::{EmbeddingRecord, Metric, Protocol};

/// Central finite differences of a scalar function.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F, h: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + h;
        let fp = f(&work);
        work[i] = orig - h;
        let fm = f(&work);
        work[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Max per-component relative error with an absolute floor on the
/// denominator, so near-zero components compare absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Independent retrieval scorer: insertion sort over (distance, index)
/// pairs, precision-by-rescan AP, explicit CMC scan.
pub struct OracleEvaluation {
    pub map: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub excluded: usize,
    pub aps: Vec<f64>,
}

fn oracle_distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => {
            let mut s = 0.0;
            for k in 0..a.len() {
                s += (a[k] - b[k]) * (a[k] - b[k]);
            }
            s.sqrt()
        }
        Metric::Cosine => {
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for k in 0..a.len() {
                dot += a[k] * b[k];
                na += a[k] * a[k];
                nb += b[k] * b[k];
            }
            1.0 - dot / (na.sqrt().max(1e-12) * nb.sqrt().max(1e-12))
        }
    }
}

fn matches_filter(m: Modality, filter: Option<Modality>) -> bool {
    filter.map_or(true, |f| m == f)
}

pub fn oracle_evaluate(
    queries: &[EmbeddingRecord],
    gallery: &[EmbeddingRecord],
    protocol: Protocol,
    metric: Metric,
) -> OracleEvaluation {
    let gallery_kept: Vec<usize> = (0..gallery.len())
        .filter(|&i| matches_filter(gallery[i].modality, protocol.gallery_filter()))
        .collect();
    assert!(!gallery_kept.is_empty(), "oracle needs a non-empty gallery");

    let mut aps = Vec::new();
    let mut excluded = 0usize;
    let mut cmc = [0usize; 3];
    for q in queries {
        if !matches_filter(q.modality, protocol.query_filter()) {
            continue;
        }
        // (distance, original gallery index, relevant)
        let mut ranked: Vec<(f64, usize, bool)> = Vec::new();
        for &gi in &gallery_kept {
            let d = oracle_distance(&q.vector, &gallery[gi].vector, metric);
            let item = (d, gi, gallery[gi].identity == q.identity);
            // Insertion sort by (distance, index).
            let pos = ranked
                .iter()
                .position(|&(dd, ii, _)| item.0 < dd || (item.0 == dd && item.1 < ii))
                .unwrap_or(ranked.len());
            ranked.insert(pos, item);
        }
        let total_relevant = ranked.iter().filter(|&&(_, _, rel)| rel).count();
        if total_relevant == 0 {
            excluded += 1;
            continue;
        }
        let mut ap = 0.0;
        for k in 1..=ranked.len() {
            if ranked[k - 1].2 {
                let in_top_k = ranked[..k].iter().filter(|&&(_, _, rel)| rel).count();
                ap += in_top_k as f64 / k as f64;
            }
        }
        ap /= total_relevant as f64;
        aps.push(ap);
        let first = ranked
            .iter()
            .position(|&(_, _, rel)| rel)
            .expect("at least one relevant item");
        for (slot, &k) in [1usize, 5, 10].iter().enumerate() {
            if first < k {
                cmc[slot] += 1;
            }
        }
    }
    let n = aps.len().max(1) as f64;
    OracleEvaluation {
        map: aps.iter().sum::<f64>() / n,
        r1: cmc[0] as f64 / n,
        r5: cmc[1] as f64 / n,
        r10: cmc[2] as f64 / n,
        excluded,
        aps,
    }
}
