//! Dataset ingestion, synthetic two-modality data generation, and
//! identity-balanced cross-modality batch sampling.

mod manifest;
mod sampler;
mod synth;

pub use manifest::{
    load_manifest, parse_manifest, save_manifest, DatasetManifest, ManifestEntry, Split,
};
pub use sampler::{sample_balanced_batch, Batch};
pub use synth::{generate_synthetic, write_dataset, SynthSpec};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Image modality tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Optical,
    Sar,
}

impl Modality {
    /// Case-insensitive parse of the manifest column value.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "optical" | "opt" => Ok(Modality::Optical),
            "sar" => Ok(Modality::Sar),
            other => Err(Error::data(format!("unknown modality {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Optical => "optical",
            Modality::Sar => "sar",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single-channel ship image with its identity label and modality tag.
///
/// Intensities are stored as `f64` in `[0, 255]`: integer-valued when
/// loaded from an 8-bit PNG, real-valued after denoising.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>, // row-major, len == width * height
    identity: u32,
    modality: Modality,
}

impl LabeledImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        identity: u32,
        modality: Modality,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::data("image dimensions must be at least 1x1"));
        }
        if pixels.len() != width * height {
            return Err(Error::data(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                width * height
            )));
        }
        if identity == 0 {
            return Err(Error::data("identity labels start at 1"));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=255.0).contains(p)) {
            return Err(Error::data("intensities must be finite and in [0, 255]"));
        }
        Ok(LabeledImage {
            width,
            height,
            pixels,
            identity,
            modality,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn identity(&self) -> u32 {
        self.identity
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Same image with new pixel values; tags preserved.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        LabeledImage::new(self.width, self.height, pixels, self.identity, self.modality)
    }

    /// Intensities rescaled to `[0, 1]`, the network input convention.
    pub fn unit_pixels(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| p / 255.0).collect()
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixels[y * self.width + x] = self.pixels[y * self.width + (self.width - 1 - x)];
            }
        }
        out
    }

    pub fn flipped_vertical(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            let src = (self.height - 1 - y) * self.width;
            let dst = y * self.width;
            out.pixels[dst..dst + self.width].copy_from_slice(&self.pixels[src..src + self.width]);
        }
        out
    }

    /// Load an 8-bit grayscale PNG and tag it.
    pub fn load_png(path: &Path, identity: u32, modality: Modality) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = img.into_raw().into_iter().map(|p| p as f64).collect();
        LabeledImage::new(w, h, pixels, identity, modality)
    }

    /// Write as 8-bit grayscale PNG, rounding real intensities.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|p| p.round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        img.save(path)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

/// A manifest's images loaded into memory, indexed by identity and modality.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<LabeledImage>,
    by_identity: BTreeMap<u32, IdentityImages>,
}

#[derive(Debug, Clone, Default)]
struct IdentityImages {
    optical: Vec<usize>,
    sar: Vec<usize>,
}

impl Dataset {
    pub fn from_images(images: Vec<LabeledImage>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::data("dataset has no images"));
        }
        let mut by_identity: BTreeMap<u32, IdentityImages> = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            let entry = by_identity.entry(img.identity()).or_default();
            match img.modality() {
                Modality::Optical => entry.optical.push(i),
                Modality::Sar => entry.sar.push(i),
            }
        }
        Ok(Dataset {
            images,
            by_identity,
        })
    }

    /// Load every image referenced by a manifest, relative to `base_dir`.
    pub fn load(manifest: &DatasetManifest, base_dir: &Path) -> Result<Self> {
        let mut images = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            images.push(LabeledImage::load_png(
                &base_dir.join(&entry.path),
                entry.identity,
                entry.modality,
            )?);
        }
        Dataset::from_images(images)
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

    /// Identities present in both modalities, ascending.
    pub fn dual_modality_identities(&self) -> Vec<u32> {
        self.by_identity
            .iter()
            .filter(|(_, v)| !v.optical.is_empty() && !v.sar.is_empty())
            .map(|(&id, _)| id)
            .collect()
    }

    /// All identities, ascending.
    pub fn identities(&self) -> Vec<u32> {
        self.by_identity.keys().copied().collect()
    }

    fn indices_for(&self, identity: u32) -> Option<(&[usize], &[usize])> {
        self.by_identity
            .get(&identity)
            .map(|v| (v.optical.as_slice(), v.sar.as_slice()))
    }

    /// New dataset with every SAR image passed through the denoiser;
    /// optical images untouched.
    pub fn denoise_sar(&self, cfg: &crate::denoise::DenoiseConfig) -> Result<Dataset> {
        let mut images = Vec::with_capacity(self.images.len());
        for img in &self.images {
            images.push(match img.modality() {
                Modality::Sar => crate::denoise::denoise_image(img, cfg)?,
                Modality::Optical => img.clone(),
            });
        }
        Dataset::from_images(images)
    }
}
