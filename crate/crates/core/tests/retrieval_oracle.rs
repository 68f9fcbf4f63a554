//! evaluate() against the brute-force oracle, protocol structure on a
//! realistically shaped test split, and ranking invariances.

mod common;

use common::oracle_evaluate;

use osreid::data::Modality;
use osreid::retrieval::{
    evaluate, pairwise_distances, EmbeddingRecord, Metric, Protocol, Source,
};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rec(vector: Vec<f64>, identity: u32, modality: Modality) -> EmbeddingRecord {
    EmbeddingRecord {
        vector,
        identity,
        modality,
        source: Source::Real,
    }
}

fn random_records(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    max_id: u32,
) -> Vec<EmbeddingRecord> {
    (0..count)
        .map(|_| {
            let modality = if rng.random_range(0.0..1.0) < 0.5 {
                Modality::Optical
            } else {
                Modality::Sar
            };
            rec(
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                rng.random_range(1..=max_id),
                modality,
            )
        })
        .collect()
}

/// 200 random small instances must score identically to the oracle.
#[test]
fn evaluate_matches_brute_force_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0usize;
    let mut nonce = 0u64;
    while checked < 200 {
        nonce += 1;
        let mut instance_rng = ChaCha8Rng::seed_from_u64(9000 + nonce);
        let dim = instance_rng.random_range(2..=5usize);
        let n_queries = instance_rng.random_range(1..=6usize);
        let n_gallery = instance_rng.random_range(1..=12usize);
        let queries = random_records(&mut instance_rng, n_queries, dim, 4);
        let gallery = random_records(&mut instance_rng, n_gallery, dim, 4);
        let protocol = match rng.random_range(0..3) {
            0 => Protocol::AllToAll,
            1 => Protocol::OpticalToSar,
            _ => Protocol::SarToOptical,
        };
        let metric = if rng.random_range(0.0..1.0) < 0.5 {
            Metric::Euclidean
        } else {
            Metric::Cosine
        };
        let Ok(eval) = evaluate(&queries, &gallery, protocol, metric) else {
            // Gallery emptied by the filter; draw another instance.
            continue;
        };
        let oracle = oracle_evaluate(&queries, &gallery, protocol, metric);
        assert_eq!(eval.metrics.map, oracle.map, "mAP mismatch on instance {nonce}");
        assert_eq!(eval.metrics.r1, oracle.r1, "R1 mismatch on instance {nonce}");
        assert_eq!(eval.metrics.r5, oracle.r5, "R5 mismatch on instance {nonce}");
        assert_eq!(eval.metrics.r10, oracle.r10, "R10 mismatch on instance {nonce}");
        assert_eq!(eval.metrics.excluded_queries, oracle.excluded);
        for (pq, ap) in eval.per_query.iter().zip(&oracle.aps) {
            assert_eq!(pq.average_precision, *ap);
        }
        checked += 1;
    }
}

/// Build query/gallery records shaped like a two-modality ship ReID
/// test split: 88 identities with one query per modality each;
/// 403 optical gallery images over identities 1..=67 and 190 SAR
/// gallery images over identities {1..=44, 68..=88}.
fn hoss_shaped_records() -> (Vec<EmbeddingRecord>, Vec<EmbeddingRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut vector = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let mut queries = Vec::new();
    for id in 1..=88u32 {
        queries.push(rec(vector(&mut rng), id, Modality::Optical));
        queries.push(rec(vector(&mut rng), id, Modality::Sar));
    }
    let optical_ids: Vec<u32> = (1..=67).collect();
    let sar_ids: Vec<u32> = (1..=44).chain(68..=88).collect();
    assert_eq!(sar_ids.len(), 65);
    let mut gallery = Vec::new();
    // 403 optical images over 67 identities: 6 each plus 1 extra.
    for (i, &id) in optical_ids.iter().enumerate() {
        let count = 6 + usize::from(i == 0);
        for _ in 0..count {
            gallery.push(rec(vector(&mut rng), id, Modality::Optical));
        }
    }
    // 190 SAR images over 65 identities: 2 each plus 1 extra for the
    // first 60.
    for (i, &id) in sar_ids.iter().enumerate() {
        let count = 2 + usize::from(i < 60);
        for _ in 0..count {
            gallery.push(rec(vector(&mut rng), id, Modality::Sar));
        }
    }
    (queries, gallery)
}

#[test]
fn protocol_filters_reproduce_test_split_structure() {
    let (queries, gallery) = hoss_shaped_records();
    assert_eq!(queries.len(), 176);
    assert_eq!(gallery.len(), 593);
    assert_eq!(
        gallery.iter().filter(|r| r.modality == Modality::Optical).count(),
        403
    );
    assert_eq!(
        gallery.iter().filter(|r| r.modality == Modality::Sar).count(),
        190
    );

    let all = evaluate(&queries, &gallery, Protocol::AllToAll, Metric::Euclidean).unwrap();
    assert_eq!(all.per_query.len(), 176);
    assert_eq!(all.metrics.excluded_queries, 0);

    // 65 optical queries retain a SAR match; 23 are excluded.
    let o2s = evaluate(&queries, &gallery, Protocol::OpticalToSar, Metric::Euclidean).unwrap();
    assert_eq!(o2s.per_query.len(), 65);
    assert_eq!(o2s.metrics.excluded_queries, 23);
    assert!(o2s.per_query.iter().all(|q| q.ranking.len() == 190));

    // 67 SAR queries retain an optical match; 21 are excluded.
    let s2o = evaluate(&queries, &gallery, Protocol::SarToOptical, Metric::Euclidean).unwrap();
    assert_eq!(s2o.per_query.len(), 67);
    assert_eq!(s2o.metrics.excluded_queries, 21);
    assert!(s2o.per_query.iter().all(|q| q.ranking.len() == 403));
}

#[test]
fn rank_k_is_monotone_and_bounded() {
    for nonce in 0..50u64 {
        let mut r = ChaCha8Rng::seed_from_u64(nonce);
        let queries = random_records(&mut r, 5, 3, 3);
        let gallery = random_records(&mut r, 10, 3, 3);
        let Ok(eval) = evaluate(&queries, &gallery, Protocol::AllToAll, Metric::Euclidean) else {
            continue;
        };
        let m = eval.metrics;
        assert!((0.0..=1.0).contains(&m.map));
        assert!(m.r1 <= m.r5 && m.r5 <= m.r10 && m.r10 <= 1.0);
    }
}

/// Scaling every embedding by a positive constant must not change
/// Euclidean rankings.
#[test]
fn positive_scaling_preserves_euclidean_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let queries = random_records(&mut rng, 4, 4, 3);
        let gallery = random_records(&mut rng, 9, 4, 3);
        let scale = rng.random_range(0.1..10.0);
        let scaled =
            |rs: &[EmbeddingRecord]| -> Vec<EmbeddingRecord> {
                rs.iter()
                    .map(|r| EmbeddingRecord {
                        vector: r.vector.iter().map(|v| v * scale).collect(),
                        ..r.clone()
                    })
                    .collect()
            };
        let a = evaluate(&queries, &gallery, Protocol::AllToAll, Metric::Euclidean).unwrap();
        let b = evaluate(&scaled(&queries), &scaled(&gallery), Protocol::AllToAll, Metric::Euclidean)
            .unwrap();
        for (x, y) in a.per_query.iter().zip(&b.per_query) {
            assert_eq!(x.ranking, y.ranking);
        }
        assert_eq!(a.metrics.map, b.metrics.map);
    }
}

/// On unit-normalized vectors, Euclidean and cosine orderings agree
/// (d^2 = 2(1 - cos)).
#[test]
fn euclidean_and_cosine_rankings_agree_on_unit_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let dim = rng.random_range(2..=6usize);
        let normalize = |v: Vec<f64>| -> Vec<f64> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / n).collect()
        };
        let queries: Vec<Vec<f64>> = (0..3)
            .map(|_| normalize((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let gallery: Vec<Vec<f64>> = (0..8)
            .map(|_| normalize((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let de = pairwise_distances(&queries, &gallery, Metric::Euclidean).unwrap();
        let dc = pairwise_distances(&queries, &gallery, Metric::Cosine).unwrap();
        for q in 0..queries.len() {
            let mut order_e: Vec<usize> = (0..gallery.len()).collect();
            order_e.sort_by(|&a, &b| de.matrix[q][a].total_cmp(&de.matrix[q][b]).then(a.cmp(&b)));
            let mut order_c: Vec<usize> = (0..gallery.len()).collect();
            order_c.sort_by(|&a, &b| dc.matrix[q][a].total_cmp(&dc.matrix[q][b]).then(a.cmp(&b)));
            assert_eq!(order_e, order_c);
        }
    }
}
