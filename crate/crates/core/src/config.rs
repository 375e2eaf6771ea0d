//! Model, loss and optimizer configuration.
//!
//! The on-disk form is a flat key/value document (TOML or JSON); loss weights
//! and optimizer settings are flattened into the top level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_kl: f64,
    pub lambda_img_l1: f64,
    pub lambda_latent_l1: f64,
    pub lambda_adv_img: f64,
    pub lambda_adv_obj: f64,
    pub lambda_ac_obj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_kl: 0.01,
            lambda_img_l1: 1.0,
            lambda_latent_l1: 10.0,
            lambda_adv_img: 1.0,
            lambda_adv_obj: 1.0,
            lambda_ac_obj: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.lambda_kl,
            self.lambda_img_l1,
            self.lambda_latent_l1,
            self.lambda_adv_img,
            self.lambda_adv_obj,
            self.lambda_ac_obj,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Appearance latent dimension.
    pub latent_dim: usize,
    /// Category embedding dimension.
    pub embedding_dim: usize,
    pub image_size: usize,
    pub crop_size: usize,
    /// Side of the fused hidden map.
    pub hidden_spatial: usize,
    /// Conv widths of the posterior estimator, one stride-2 stage each.
    pub estimator_channels: Vec<usize>,
    /// Conv widths of the object encoder; the last entry is the hidden width.
    pub encoder_channels: Vec<usize>,
    pub clstm_layers: usize,
    pub clstm_channels: Vec<usize>,
    pub residual_blocks: usize,
    /// Widths of the upsampling stages of the decoder.
    pub decoder_channels: Vec<usize>,
    pub d_img_channels: Vec<usize>,
    pub d_obj_channels: Vec<usize>,
    #[serde(flatten)]
    pub loss_weights: LossWeights,
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
    pub max_objects: usize,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub keep_checkpoints: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            embedding_dim: 64,
            image_size: 64,
            crop_size: 32,
            hidden_spatial: 8,
            estimator_channels: vec![64, 128, 256],
            encoder_channels: vec![128, 256, 256],
            clstm_layers: 2,
            clstm_channels: vec![256, 256],
            residual_blocks: 6,
            decoder_channels: vec![256, 128, 64],
            d_img_channels: vec![64, 128, 256, 512],
            d_obj_channels: vec![64, 128, 256],
            loss_weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            max_objects: 30,
            seed: 0,
            checkpoint_interval: 1000,
            keep_checkpoints: 3,
        }
    }
}

impl ModelConfig {
    /// Small network for CPU training at 32x32. Same topology as the
    /// default, narrower and at half resolution. Runs are thousands of steps
    /// rather than hundreds of thousands, so the step size is larger.
    pub fn desk() -> Self {
        Self {
            latent_dim: 8,
            embedding_dim: 8,
            image_size: 32,
            crop_size: 16,
            hidden_spatial: 4,
            estimator_channels: vec![16, 32, 32],
            encoder_channels: vec![16, 32, 32],
            clstm_layers: 2,
            clstm_channels: vec![32, 32],
            residual_blocks: 6,
            decoder_channels: vec![32, 32, 16],
            d_img_channels: vec![16, 32, 32, 64],
            d_obj_channels: vec![16, 32, 64],
            max_objects: 8,
            checkpoint_interval: 500,
            optimizer: OptimizerConfig {
                learning_rate: 1e-3,
                ..OptimizerConfig::default()
            },
            ..Self::default()
        }
    }

    /// Hidden width fed into and produced by the fuser.
    pub fn hidden_channels(&self) -> usize {
        *self.clstm_channels.last().unwrap_or(&0)
    }

    /// Number of stride-2 stages between the image and the hidden map.
    pub fn spatial_stages(&self) -> usize {
        (self.image_size / self.hidden_spatial.max(1)).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.latent_dim == 0 || self.embedding_dim == 0 {
            return bad("latent and embedding dims must be positive".into());
        }
        if self.hidden_spatial == 0 || self.image_size % self.hidden_spatial != 0 {
            return bad(format!(
                "image_size {} not divisible by hidden_spatial {}",
                self.image_size, self.hidden_spatial
            ));
        }
        let ratio = self.image_size / self.hidden_spatial;
        if !ratio.is_power_of_two() || ratio < 2 {
            return bad(format!("image_size / hidden_spatial = {ratio} must be a power of two >= 2"));
        }
        let stages = self.spatial_stages();
        if self.encoder_channels.len() != stages || self.decoder_channels.len() != stages {
            return bad(format!(
                "encoder and decoder need {stages} stages each, got {} and {}",
                self.encoder_channels.len(),
                self.decoder_channels.len()
            ));
        }
        if self.crop_size == 0 || self.crop_size > self.image_size {
            return bad(format!("crop_size {} must be in 1..={}", self.crop_size, self.image_size));
        }
        let est = 1usize << self.estimator_channels.len();
        if self.estimator_channels.is_empty() || self.crop_size % est != 0 {
            return bad(format!("crop_size must be divisible by {est}"));
        }
        if self.clstm_layers == 0 || self.clstm_channels.len() != self.clstm_layers {
            return bad("clstm_channels must list one width per layer".into());
        }
        if self.d_img_channels.len() != 4 || self.image_size % 16 != 0 {
            return bad("image discriminator has four stride-2 stages".into());
        }
        if self.d_obj_channels.len() != 3 || self.crop_size % 8 != 0 {
            return bad("object discriminator has three stride-2 stages".into());
        }
        if self.max_objects == 0 || self.optimizer.batch_size == 0 {
            return bad("max_objects and batch_size must be positive".into());
        }
        if self.loss_weights.as_array().iter().any(|w| !(*w >= 0.0)) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::ParseError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a TOML (or `.json`) config file.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let cfg: Self = serde_json::from_str(&text)?;
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = ModelConfig::default();
        assert_eq!((c.latent_dim, c.embedding_dim), (64, 64));
        assert_eq!((c.image_size, c.crop_size), (64, 32));
        assert_eq!(c.residual_blocks, 6);
        assert_eq!(c.optimizer.learning_rate, 1e-4);
        assert_eq!(c.optimizer.batch_size, 8);
        assert_eq!(c.loss_weights.as_array(), [0.01, 1.0, 10.0, 1.0, 1.0, 1.0]);
        c.validate().unwrap();
        ModelConfig::desk().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_flat_and_lossless() {
        let c = ModelConfig::default();
        let text = c.to_toml_string();
        assert!(text.contains("lambda_latent_l1 = 10.0"));
        assert!(text.contains("learning_rate = 0.0001"));
        assert!(!text.lines().any(|l| l.starts_with('[')));
        assert_eq!(ModelConfig::from_toml_str(&text).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), c);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let c = ModelConfig::from_toml_str("latent_dim = 32\nlambda_kl = 0.5\n").unwrap();
        assert_eq!(c.latent_dim, 32);
        assert_eq!(c.loss_weights.lambda_kl, 0.5);
        assert_eq!(c.embedding_dim, 64);
    }

    #[test]
    fn rejects_indivisible_hidden_size() {
        let c = ModelConfig {
            hidden_spatial: 7,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = ModelConfig {
            crop_size: 128,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
