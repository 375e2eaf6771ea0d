#![allow(dead_code)]

use std::path::{Path, PathBuf};

use layout2im::config::OptimizerConfig;
use layout2im::data::{synth_shapes, DatasetSplit, SHAPE_NAMES};
use layout2im::trainer::{latest_checkpoint, train};
use layout2im::ModelConfig;

/// A 16px model that trains in well under a second per step.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        crop_size: 8,
        hidden_spatial: 4,
        latent_dim: 4,
        embedding_dim: 4,
        estimator_channels: vec![4, 4],
        encoder_channels: vec![8, 8],
        clstm_channels: vec![8, 8],
        residual_blocks: 1,
        decoder_channels: vec![8, 8],
        d_img_channels: vec![4, 4, 8, 8],
        d_obj_channels: vec![4, 8, 8],
        max_objects: 8,
        checkpoint_interval: 5,
        optimizer: OptimizerConfig {
            batch_size: 4,
            ..Default::default()
        },
        ..ModelConfig::default()
    }
}

pub fn tiny_split(seed: u64, count: usize) -> DatasetSplit {
    synth_shapes(seed, count, &SHAPE_NAMES, 16).unwrap()
}

/// Trains the tiny model for `iterations` steps and returns its newest checkpoint.
pub fn synthetic_checkpoint(dir: &Path, iterations: u64) -> PathBuf {
    train(&tiny_config(), &tiny_split(0, 8), iterations, dir).unwrap();
    latest_checkpoint(dir).unwrap().unwrap()
}
