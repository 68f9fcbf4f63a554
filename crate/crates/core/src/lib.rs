//! Optical-SAR cross-modal ship re-identification toolkit.
//!
//! The pieces, bottom to top:
//!
//! - [`data`]: manifests, synthetic two-modality data, balanced batches.
//! - [`denoise`]: percentile SAR speckle suppression.
//! - [`align`]: class-wise modality statistics, the alignment loss and
//!   its analytic gradient, and closed-form Gaussian Wasserstein-2.
//! - [`embed`]: small embedding network, ID / triplet / combined losses
//!   with hand-derived backprop, and the training loop.
//! - [`bridge`]: Brownian-bridge diffusion between paired modality
//!   latents, noise-predictor training, and pseudo-SAR generation.
//! - [`retrieval`]: tau-weighted feature fusion, distances, the three
//!   evaluation protocols, and mAP / Rank-k metrics.
//! - [`pipeline`]: end-to-end ablation runs and hyperparameter sweeps.

pub mod align;
mod binio;
pub mod bridge;
pub mod config;
pub mod data;
pub mod denoise;
pub mod embed;
mod error;
pub mod nn;
pub mod pipeline;
pub mod retrieval;
pub mod seed;

pub use error::{Error, Result};
