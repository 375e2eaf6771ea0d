//! Dataset ingestion, the synthetic-shapes corpus, resampling and batching.

mod batches;
mod manifest;
mod resample;
mod synth;

use serde::{Deserialize, Serialize};

pub use batches::{batches, Batches};
pub use manifest::{
    coco_to_manifest, load_layout_dataset, read_manifest, write_split, LoadOptions, ManifestEntry,
};
pub use resample::{crop_and_resize, crop_and_resize_batch, resize_region};
pub use synth::{synth_shapes, BACKGROUND, SHAPE_NAMES};

use crate::layout::{CategoryVocabulary, Layout};
use crate::raster::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub layout: Layout,
    pub id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    /// Guesses the split from a manifest file name, defaulting to train.
    pub fn from_file_stem(stem: &str) -> Self {
        let s = stem.to_ascii_lowercase();
        if s.contains("test") {
            SplitName::Test
        } else if s.contains("val") {
            SplitName::Val
        } else {
            SplitName::Train
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub samples: Vec<Sample>,
    pub vocabulary: CategoryVocabulary,
    pub split_name: SplitName,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` samples as a new split.
    pub fn take(&self, n: usize) -> DatasetSplit {
        DatasetSplit {
            samples: self.samples.iter().take(n).cloned().collect(),
            vocabulary: self.vocabulary.clone(),
            split_name: self.split_name,
        }
    }
}
