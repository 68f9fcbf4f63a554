//! Percentile-based SAR speckle suppression with 8-bit rescaling.
//!
//! The lowest `alpha`% of pixel values are treated as speckle and
//! mapped to 0; the retained pixels are linearly stretched so the
//! retained minimum lands at 0 and the maximum just under 255.
//!
//! The operation is deliberately not idempotent: re-running it changes
//! the percentile landscape of the already-stretched image.

use crate::data::{LabeledImage, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct DenoiseConfig {
    /// Percent of the lowest pixel values to discard, in `[0, 100)`.
    pub alpha: f64,
    /// Stabilizer added to the rescale denominator.
    pub epsilon: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            alpha: 5.0,
            epsilon: 1e-6,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !(0.0..100.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "alpha must lie in [0, 100), got {}",
                self.alpha
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }
}

/// All pixel intensities in ascending order (stable for ties).
pub fn sort_pixels(image: &LabeledImage) -> Vec<f64> {
    let mut sorted = image.pixels().to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
}

/// Index of the retained minimum: `floor(alpha/100 * H*W)`.
pub fn cut_index(alpha: f64, pixel_count: usize) -> usize {
    (alpha * pixel_count as f64 / 100.0).floor() as usize
}

fn denoise_pixels(image: &LabeledImage, cfg: &DenoiseConfig) -> Result<LabeledImage> {
    cfg.validate()?;
    let sorted = sort_pixels(image);
    let n = sorted.len();
    let k_cut = cut_index(cfg.alpha, n);
    debug_assert!(k_cut < n, "alpha < 100 keeps at least one pixel");
    let p_min = sorted[k_cut];
    let p_max = sorted[n - 1];
    let denom = p_max - p_min + cfg.epsilon;
    let out = image
        .pixels()
        .iter()
        .map(|&p| {
            if p < p_min {
                0.0
            } else {
                255.0 * (p - p_min) / denom
            }
        })
        .collect();
    image.with_pixels(out)
}

/// Denoise a SAR image. Calling this on an optical image is an error;
/// use [`denoise_image_forced`] to override.
pub fn denoise_image(image: &LabeledImage, cfg: &DenoiseConfig) -> Result<LabeledImage> {
    if image.modality() != Modality::Sar {
        return Err(Error::data(
            "denoise expects a SAR image (use the force variant for optical input)",
        ));
    }
    denoise_pixels(image, cfg)
}

/// Denoise regardless of the modality tag.
pub fn denoise_image_forced(image: &LabeledImage, cfg: &DenoiseConfig) -> Result<LabeledImage> {
    denoise_pixels(image, cfg)
}
