//! Identity cross-entropy and batch-hard triplet losses.

use crate::error::{Error, Result};

/// Softmax cross-entropy with max-subtraction for stability.
pub fn id_loss(logits: &[f64], label: usize) -> Result<f64> {
    Ok(id_loss_with_grad(logits, label)?.0)
}

/// Loss plus gradient w.r.t. the logits (`softmax - onehot`).
pub fn id_loss_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::data("id loss needs at least one logit"));
    }
    if label >= logits.len() {
        return Err(Error::data(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exp_sum = 0.0;
    let mut softmax = Vec::with_capacity(logits.len());
    for &z in logits {
        let e = (z - max).exp();
        exp_sum += e;
        softmax.push(e);
    }
    let loss = exp_sum.ln() - (logits[label] - max);
    for s in &mut softmax {
        *s /= exp_sum;
    }
    softmax[label] -= 1.0;
    Ok((loss, softmax))
}

/// Batch-hard triplet loss result, including the per-anchor hinge terms
/// and the gradient w.r.t. each embedding.
#[derive(Debug, Clone)]
pub struct TripletResult {
    pub value: f64,
    pub per_anchor: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean over anchors of `max(0, hardest_pos_dist - hardest_neg_dist + margin)`
/// with Euclidean distances. Hardest positive/negative ties break on the
/// lowest index. Errors when an anchor lacks a positive or negative,
/// which signals a sampler misconfiguration.
pub fn triplet_loss_batch_hard(
    embeddings: &[Vec<f64>],
    identities: &[u32],
    margin: f64,
) -> Result<TripletResult> {
    let b = embeddings.len();
    if b != identities.len() {
        return Err(Error::data("embeddings and identities differ in length"));
    }
    if b < 2 {
        return Err(Error::data("triplet loss needs at least 2 samples"));
    }
    if !margin.is_finite() || margin < 0.0 {
        return Err(Error::config("triplet margin must be finite and non-negative"));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::data("embeddings must share one dimension"));
    }

    let mut dist = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in (i + 1)..b {
            let d = euclidean(&embeddings[i], &embeddings[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let mut per_anchor = Vec::with_capacity(b);
    let mut gradients = vec![vec![0.0; dim]; b];
    for a in 0..b {
        let mut hardest_pos: Option<usize> = None;
        let mut hardest_neg: Option<usize> = None;
        for j in 0..b {
            if j == a {
                continue;
            }
            if identities[j] == identities[a] {
                if hardest_pos.map_or(true, |p| dist[a][j] > dist[a][p]) {
                    hardest_pos = Some(j);
                }
            } else if hardest_neg.map_or(true, |n| dist[a][j] < dist[a][n]) {
                hardest_neg = Some(j);
            }
        }
        let pos = hardest_pos.ok_or_else(|| {
            Error::data(format!(
                "anchor {a} (identity {}) has no positive in the batch",
                identities[a]
            ))
        })?;
        let neg = hardest_neg.ok_or_else(|| {
            Error::data(format!(
                "anchor {a} (identity {}) has no negative in the batch",
                identities[a]
            ))
        })?;
        let term = (dist[a][pos] - dist[a][neg] + margin).max(0.0);
        per_anchor.push(term);
        if term > 0.0 {
            let b_f = b as f64;
            // d||e_a - e_j|| / d e_a = (e_a - e_j) / dist; zero distance
            // contributes a zero subgradient.
            if dist[a][pos] > 0.0 {
                for k in 0..dim {
                    let u = (embeddings[a][k] - embeddings[pos][k]) / dist[a][pos];
                    gradients[a][k] += u / b_f;
                    gradients[pos][k] -= u / b_f;
                }
            }
            if dist[a][neg] > 0.0 {
                for k in 0..dim {
                    let v = (embeddings[a][k] - embeddings[neg][k]) / dist[a][neg];
                    gradients[a][k] -= v / b_f;
                    gradients[neg][k] += v / b_f;
                }
            }
        }
    }
    let value = per_anchor.iter().sum::<f64>() / b as f64;
    Ok(TripletResult {
        value,
        per_anchor,
        gradients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_loss_hand_value() {
        // logits (10, 0), label 0 -> ln(1 + e^{-10}).
        let (loss, _) = id_loss_with_grad(&[10.0, 0.0], 0).unwrap();
        let expected = (-10.0f64).exp().ln_1p();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 4.5399e-5).abs() < 1e-9);
    }

    #[test]
    fn id_loss_uniform_logits_is_ln_c() {
        for c in [2usize, 5, 17] {
            let logits = vec![0.42; c];
            let loss = id_loss(&logits, c / 2).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn id_loss_gradient_sums_to_zero() {
        let (_, grad) = id_loss_with_grad(&[1.0, -2.0, 0.5], 2).unwrap();
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn id_loss_rejects_out_of_range_label() {
        assert!(id_loss(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn triplet_hand_example() {
        // Anchor 0: hardest positive at distance 1.0, hardest negative at
        // 1.2, margin 0.3 -> hinge term 0.1.
        let embeddings = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.2],
            vec![0.0, 2.2],
        ];
        let ids = vec![1, 1, 2, 2];
        let result = triplet_loss_batch_hard(&embeddings, &ids, 0.3).unwrap();
        assert!((result.per_anchor[0] - 0.1).abs() < 1e-12);
        assert_eq!(result.per_anchor[1], 0.0);
        assert!((result.per_anchor[2] - 0.1).abs() < 1e-12);
        assert_eq!(result.per_anchor[3], 0.0);
        assert!((result.value - 0.05).abs() < 1e-12);
    }

    #[test]
    fn separated_clusters_give_zero_loss() {
        let embeddings = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![10.0, 0.0],
            vec![10.1, 0.0],
        ];
        let ids = vec![1, 1, 2, 2];
        let result = triplet_loss_batch_hard(&embeddings, &ids, 0.3).unwrap();
        assert_eq!(result.value, 0.0);
        assert!(result.gradients.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn missing_positive_or_negative_is_an_error() {
        let embeddings = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(triplet_loss_batch_hard(&embeddings, &[1, 2, 3], 0.3).is_err());
        assert!(triplet_loss_batch_hard(&embeddings, &[1, 1, 1], 0.3).is_err());
    }
}
