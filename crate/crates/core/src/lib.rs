pub mod cli;
pub mod config;
pub mod data;
pub mod discriminators;
pub mod error;
pub mod generator;
pub mod layout;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod service;
pub mod trainer;

pub use config::{LossWeights, ModelConfig, OptimizerConfig};
pub use error::{Error, Result};
pub use layout::{BoundingBox, CategoryVocabulary, Layout, ObjectSpec};
pub use raster::ImageTensor;
