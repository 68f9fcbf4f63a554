//! Flat `key = value` pipeline configuration. Every tunable is scalar;
//! unknown keys are rejected.

use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::Metric;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    // Synthetic benchmark shape.
    pub num_ids: usize,
    pub imgs_per_id: usize,
    pub side: usize,
    pub query_per_id: usize,
    pub gallery_per_id: usize,
    // Denoising.
    pub alpha: f64,
    pub epsilon: f64,
    // Loss weights.
    pub lambda_id: f64,
    pub lambda_tri: f64,
    pub lambda_cmal: f64,
    pub triplet_margin: f64,
    // Embedder training.
    pub lr: f64,
    pub batch_size: usize,
    pub instances_per_id: usize,
    pub epochs: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub embed_dim: usize,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    // Bridge generator.
    pub bridge_t: usize,
    pub bridge_steps: usize,
    pub bridge_hidden: usize,
    pub bridge_epochs: usize,
    pub bridge_lr: f64,
    pub bridge_batch: usize,
    pub time_embed_dim: usize,
    // Fusion and evaluation.
    pub tau: f64,
    pub k_pseudo: usize,
    pub metric: Metric,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            num_ids: 10,
            imgs_per_id: 8,
            side: 32,
            query_per_id: 2,
            gallery_per_id: 2,
            alpha: 5.0,
            epsilon: 1e-6,
            lambda_id: 1.0,
            lambda_tri: 1.0,
            lambda_cmal: 2.0,
            triplet_margin: 0.3,
            lr: 5e-4,
            batch_size: 32,
            instances_per_id: 4,
            epochs: 30,
            hidden1: 128,
            hidden2: 64,
            embed_dim: 16,
            flip_horizontal: false,
            flip_vertical: false,
            bridge_t: 1000,
            bridge_steps: 50,
            bridge_hidden: 128,
            bridge_epochs: 60,
            bridge_lr: 1e-3,
            bridge_batch: 16,
            time_embed_dim: 16,
            tau: 0.2,
            k_pseudo: 5,
            metric: Metric::Euclidean,
        }
    }
}

macro_rules! config_fields {
    ($cfg:expr, $f:ident) => {
        $f!(seed, u64);
        $f!(num_ids, usize);
        $f!(imgs_per_id, usize);
        $f!(side, usize);
        $f!(query_per_id, usize);
        $f!(gallery_per_id, usize);
        $f!(alpha, f64);
        $f!(epsilon, f64);
        $f!(lambda_id, f64);
        $f!(lambda_tri, f64);
        $f!(lambda_cmal, f64);
        $f!(triplet_margin, f64);
        $f!(lr, f64);
        $f!(batch_size, usize);
        $f!(instances_per_id, usize);
        $f!(epochs, usize);
        $f!(hidden1, usize);
        $f!(hidden2, usize);
        $f!(embed_dim, usize);
        $f!(flip_horizontal, bool);
        $f!(flip_vertical, bool);
        $f!(bridge_t, usize);
        $f!(bridge_steps, usize);
        $f!(bridge_hidden, usize);
        $f!(bridge_epochs, usize);
        $f!(bridge_lr, f64);
        $f!(bridge_batch, usize);
        $f!(time_embed_dim, usize);
        $f!(tau, f64);
        $f!(k_pseudo, usize);
    };
}

impl PipelineConfig {
    /// Parse `key = value` text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("config line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("config line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! try_set {
            ($name:ident, $ty:ty) => {
                if key == stringify!($name) {
                    self.$name = value.parse::<$ty>().map_err(|_| {
                        Error::config(format!(
                            "bad value {value:?} for key {key} (expected {})",
                            stringify!($ty)
                        ))
                    })?;
                    return Ok(());
                }
            };
        }
        config_fields!(self, try_set);
        if key == "metric" {
            self.metric = Metric::parse(value)?;
            return Ok(());
        }
        Err(Error::config(format!("unknown config key {key:?}")))
    }

    /// Serialize every key in declaration order; `parse` of the output
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($name:ident, $ty:ty) => {
                out.push_str(&format!("{} = {}\n", stringify!($name), self.$name));
            };
        }
        config_fields!(self, emit);
        out.push_str(&format!("metric = {}\n", self.metric.as_str()));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_ids < 2 {
            return Err(Error::config("num_ids must be at least 2"));
        }
        if self.side < 8 {
            return Err(Error::config("side must be at least 8"));
        }
        if self.query_per_id == 0 || self.gallery_per_id == 0 {
            return Err(Error::config("query_per_id and gallery_per_id must be positive"));
        }
        if self.query_per_id + self.gallery_per_id >= self.imgs_per_id {
            return Err(Error::config(
                "imgs_per_id must exceed query_per_id + gallery_per_id so training data remains",
            ));
        }
        if !(0.0..100.0).contains(&self.alpha) {
            return Err(Error::config("alpha must lie in [0, 100)"));
        }
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::config("epsilon must be positive"));
        }
        for (name, v) in [
            ("lambda_id", self.lambda_id),
            ("lambda_tri", self.lambda_tri),
            ("lambda_cmal", self.lambda_cmal),
            ("triplet_margin", self.triplet_margin),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and non-negative")));
            }
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::config("lr must be positive"));
        }
        if self.instances_per_id < 2 {
            return Err(Error::config("instances_per_id must be at least 2"));
        }
        if self.batch_size < 2 * self.instances_per_id {
            return Err(Error::config("batch_size must cover at least 2 identities"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        if self.embed_dim < 2 {
            return Err(Error::config("embed_dim must be at least 2"));
        }
        if self.bridge_t < 2 || self.bridge_t % 2 != 0 {
            return Err(Error::config("bridge_t must be even and at least 2"));
        }
        if self.bridge_steps == 0 || self.bridge_t % self.bridge_steps != 0 {
            return Err(Error::config("bridge_steps must divide bridge_t"));
        }
        if self.bridge_hidden == 0 || self.bridge_batch == 0 || self.bridge_epochs == 0 {
            return Err(Error::config("bridge sizes and epochs must be positive"));
        }
        if self.bridge_lr <= 0.0 || !self.bridge_lr.is_finite() {
            return Err(Error::config("bridge_lr must be positive"));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::config("time_embed_dim must be even and positive"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("tau must lie in [0, 1]"));
        }
        if self.k_pseudo == 0 {
            return Err(Error::config("k_pseudo must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_shipped_values() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.alpha, 5.0);
        assert_eq!(cfg.lambda_id, 1.0);
        assert_eq!(cfg.lambda_tri, 1.0);
        assert_eq!(cfg.lambda_cmal, 2.0);
        assert_eq!(cfg.lr, 5e-4);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.tau, 0.2);
        assert_eq!(cfg.k_pseudo, 5);
        assert_eq!(cfg.triplet_margin, 0.3);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = PipelineConfig::default();
        cfg.alpha = 12.5;
        cfg.metric = Metric::Cosine;
        cfg.flip_horizontal = true;
        cfg.seed = 1234567;
        let text = cfg.to_text();
        let parsed = PipelineConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(PipelineConfig::parse(&parsed.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse("learning_rate = 0.1\n").is_err());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(PipelineConfig::parse("alpha = 100\n").is_err());
        assert!(PipelineConfig::parse("tau = 1.5\n").is_err());
        assert!(PipelineConfig::parse("bridge_t = 999\n").is_err());
        assert!(PipelineConfig::parse("bridge_steps = 7\n").is_err());
        assert!(PipelineConfig::parse("instances_per_id = 1\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cfg = PipelineConfig::parse("# comment\n\nalpha = 2.5 # inline\n").unwrap();
        assert_eq!(cfg.alpha, 2.5);
    }
}
