//! Class-conditional modality statistics, the class-wise modality
//! alignment loss with its analytic gradient, and the closed-form
//! Gaussian Wasserstein-2 distance used to validate the diagonal
//! approximation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::Modality;
use crate::error::{Error, Result};

/// One embedded sample tagged with identity and modality.
#[derive(Debug, Clone)]
pub struct Feature {
    pub vector: Vec<f64>,
    pub identity: u32,
    pub modality: Modality,
}

/// Mean and element-wise population variance of one modality side.
#[derive(Debug, Clone, PartialEq)]
pub struct SideStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Per-identity statistics; a side is `None` when the identity has no
/// samples in that modality.
#[derive(Debug, Clone)]
pub struct ClassModalityStats {
    pub identity: u32,
    pub optical: Option<SideStats>,
    pub sar: Option<SideStats>,
}

/// Statistics over a batch: per-class entries plus the set of
/// identities populated in both modalities.
#[derive(Debug, Clone)]
pub struct ClassStats {
    pub per_class: BTreeMap<u32, ClassModalityStats>,
    pub valid: Vec<u32>,
    pub dim: usize,
}

fn side_stats(vectors: &[&[f64]], dim: usize) -> SideStats {
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for v in vectors {
        for ((s, x), m) in var.iter_mut().zip(v.iter()).zip(mean.iter()) {
            let d = x - m;
            *s += d * d;
        }
    }
    for s in var.iter_mut() {
        *s /= n;
    }
    SideStats {
        mean,
        var,
        count: vectors.len(),
    }
}

/// Per-identity means and element-wise population variances, split by
/// modality, plus the valid set of identities seen in both modalities.
pub fn class_statistics(features: &[Feature]) -> Result<ClassStats> {
    if features.is_empty() {
        return Err(Error::data("class statistics need at least one feature"));
    }
    let dim = features[0].vector.len();
    if features.iter().any(|f| f.vector.len() != dim) {
        return Err(Error::data("feature vectors must share one dimension"));
    }
    let mut grouped: BTreeMap<u32, (Vec<&[f64]>, Vec<&[f64]>)> = BTreeMap::new();
    for f in features {
        let entry = grouped.entry(f.identity).or_default();
        match f.modality {
            Modality::Optical => entry.0.push(&f.vector),
            Modality::Sar => entry.1.push(&f.vector),
        }
    }
    let mut per_class = BTreeMap::new();
    let mut valid = Vec::new();
    for (identity, (opt, sar)) in grouped {
        let optical = (!opt.is_empty()).then(|| side_stats(&opt, dim));
        let sar_side = (!sar.is_empty()).then(|| side_stats(&sar, dim));
        if optical.is_some() && sar_side.is_some() {
            valid.push(identity);
        }
        per_class.insert(
            identity,
            ClassModalityStats {
                identity,
                optical,
                sar: sar_side,
            },
        );
    }
    Ok(ClassStats {
        per_class,
        valid,
        dim,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Class-wise modality alignment loss:
/// `(1/|C|) sum_c ( ||mu_opt - mu_sar||^2 + ||var_opt - var_sar||^2 )`.
/// Zero when no identity is populated in both modalities.
pub fn cmal_loss(stats: &ClassStats) -> f64 {
    if stats.valid.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for id in &stats.valid {
        let class = &stats.per_class[id];
        let opt = class.optical.as_ref().expect("valid identity has optical");
        let sar = class.sar.as_ref().expect("valid identity has sar");
        total += sq_dist(&opt.mean, &sar.mean) + sq_dist(&opt.var, &sar.var);
    }
    total / stats.valid.len() as f64
}

/// Exact gradient of [`cmal_loss`] with respect to every input feature.
///
/// For a sample `f` on the optical side of class `c` with `n = |O_c|`:
/// `d/df = (2/(|C| n)) (mu_opt - mu_sar) + (4/(|C| n)) (var_opt - var_sar) .* (f - mu_opt)`
/// (the mean-centered sum inside the variance derivative vanishes).
/// SAR-side samples get the sign-flipped form; identities outside the
/// valid set get zero gradient.
pub fn cmal_gradient(features: &[Feature]) -> Result<Vec<Vec<f64>>> {
    Ok(cmal_loss_and_gradient(features)?.1)
}

/// Loss and gradient in one pass (shared by the trainer).
pub fn cmal_loss_and_gradient(features: &[Feature]) -> Result<(f64, Vec<Vec<f64>>)> {
    let stats = class_statistics(features)?;
    let loss = cmal_loss(&stats);
    let dim = stats.dim;
    let mut grads = vec![vec![0.0; dim]; features.len()];
    if stats.valid.is_empty() {
        return Ok((loss, grads));
    }
    let c_count = stats.valid.len() as f64;
    let valid: std::collections::BTreeSet<u32> = stats.valid.iter().copied().collect();
    for (f, grad) in features.iter().zip(grads.iter_mut()) {
        if !valid.contains(&f.identity) {
            continue;
        }
        let class = &stats.per_class[&f.identity];
        let opt = class.optical.as_ref().expect("valid identity has optical");
        let sar = class.sar.as_ref().expect("valid identity has sar");
        let (own, sign) = match f.modality {
            Modality::Optical => (opt, 1.0),
            Modality::Sar => (sar, -1.0),
        };
        let n = own.count as f64;
        for k in 0..dim {
            let mean_term = 2.0 * (opt.mean[k] - sar.mean[k]) / (c_count * n);
            let var_term = 4.0 * (opt.var[k] - sar.var[k]) * (f.vector[k] - own.mean[k])
                / (c_count * n);
            grad[k] = sign * (mean_term + var_term);
        }
    }
    Ok((loss, grads))
}

/// Mean class-centroid distance `(1/|C|) sum_c ||mu_opt - mu_sar||_2`,
/// the tracked modality-gap diagnostic. Zero when the valid set is empty.
pub fn centroid_gap(stats: &ClassStats) -> f64 {
    if stats.valid.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for id in &stats.valid {
        let class = &stats.per_class[id];
        let opt = class.optical.as_ref().expect("valid identity has optical");
        let sar = class.sar.as_ref().expect("valid identity has sar");
        total += sq_dist(&opt.mean, &sar.mean).sqrt();
    }
    total / stats.valid.len() as f64
}

/// A Gaussian as mean vector plus full covariance matrix.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianSpec {
    /// `covariance` is given row-major; it must be square, match the
    /// mean's dimension, and be symmetric within 1e-12.
    pub fn new(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d || covariance.iter().any(|row| row.len() != d) {
            return Err(Error::data("covariance shape must match mean dimension"));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 {
                    return Err(Error::numeric("covariance is not symmetric within 1e-12"));
                }
            }
        }
        Ok(GaussianSpec {
            mean: DVector::from_vec(mean),
            covariance: cov,
        })
    }

    /// Diagonal lift: covariance `diag(sigma^2)`.
    pub fn from_diagonal(mean: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        if mean.len() != sigma.len() {
            return Err(Error::data("mean and sigma dimensions differ"));
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::numeric("sigma entries must be non-negative"));
        }
        let d = mean.len();
        let cov = DMatrix::from_fn(d, d, |i, j| if i == j { sigma[i] * sigma[i] } else { 0.0 });
        Ok(GaussianSpec {
            mean: DVector::from_vec(mean),
            covariance: cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric PSD square root via eigendecomposition, eigenvalues
/// clamped at zero. Errors when an eigenvalue falls below -1e-10.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    for &v in eig.eigenvalues.iter() {
        if v < -1e-10 {
            return Err(Error::numeric(format!(
                "{what}: matrix is not PSD (eigenvalue {v})"
            )));
        }
    }
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose())
}

/// Squared Wasserstein-2 distance between Gaussians:
/// `||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S2^{1/2} S1 S2^{1/2})^{1/2})`.
pub fn w2_gaussian(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::data("Gaussian dimensions differ"));
    }
    let mean_term = (&p.mean - &q.mean).norm_squared();
    let sqrt_q = psd_sqrt(&q.covariance, "second covariance")?;
    // Validate the first covariance's PSD-ness on its own as well.
    psd_sqrt(&p.covariance, "first covariance")?;
    let inner = &sqrt_q * &p.covariance * &sqrt_q;
    let cross = psd_sqrt(&inner, "cross term")?;
    let trace_term = p.covariance.trace() + q.covariance.trace() - 2.0 * cross.trace();
    let total = mean_term + trace_term;
    if total < -1e-9 {
        return Err(Error::numeric(format!(
            "squared W2 came out {total}, below the -1e-9 tolerance"
        )));
    }
    Ok(total.max(0.0))
}

/// Diagonal-covariance W2: `||mu1-mu2||^2 + ||sigma1-sigma2||^2`.
pub fn w2_diagonal(mu1: &[f64], sigma1: &[f64], mu2: &[f64], sigma2: &[f64]) -> Result<f64> {
    if mu1.len() != sigma1.len() || mu2.len() != sigma2.len() || mu1.len() != mu2.len() {
        return Err(Error::data("w2_diagonal inputs must share one dimension"));
    }
    if sigma1.iter().chain(sigma2).any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::numeric("sigma entries must be non-negative"));
    }
    Ok(sq_dist(mu1, mu2) + sq_dist(sigma1, sigma2))
}
