//! A small conv net used both as object classifier and feature extractor,
//! trainable on dataset crops or loaded from external safetensors weights.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureExtractor, ObjectClassifier};
use crate::config::OptimizerConfig;
use crate::data::{crop_and_resize_batch, DatasetSplit};
use crate::error::{Error, Result};
use crate::layout::BoundingBox;
use crate::losses::ac_loss;
use crate::nn::{ids_tensor, log_softmax, Adam, Conv2d, Linear, ParamStore};
use crate::raster::ImageTensor;
use crate::trainer::{read_archive, write_archive};

const KEY_NAME: &str = "name";
const KEY_VERSION: &str = "version";
const KEY_INPUT: &str = "input_size";

/// Stride-2 conv + ReLU stages, global average pooling and an optional
/// linear classification head.
///
/// Weight files name tensors `conv{i}.weight` `(C_out, C_in, k, k)`,
/// `conv{i}.bias` and optionally `head.weight` `(K, C)` / `head.bias`, with
/// string metadata `input_size` and optionally `name` and `version`.
pub struct ConvNet {
    store: ParamStore,
    convs: Vec<Conv2d>,
    head: Option<Linear>,
    input_size: usize,
    name: String,
    version: String,
}

impl ConvNet {
    pub fn new(name: &str, widths: &[usize], num_classes: Option<usize>, input_size: usize, seed: u64) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::InvalidConfig("conv net needs at least one layer".into()));
        }
        let store = ParamStore::new(DType::F32, Device::Cpu, seed);
        let root = store.root();
        let mut convs = Vec::new();
        let mut in_c = 3;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(Conv2d::new(root.pp(format!("conv{i}")), in_c, w, 3, 2, 1, true)?);
            in_c = w;
        }
        let head = num_classes.map(|k| Linear::new(root.pp("head"), in_c, k, None)).transpose()?;
        Ok(Self {
            store,
            convs,
            head,
            input_size,
            name: name.to_string(),
            version: format!("{widths:?}-{input_size}-{seed}"),
        })
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.head.as_ref().map(|h| h.weight.dims()[0])
    }

    pub fn set_version(&mut self, version: impl Into<String>) {
        self.version = version.into();
    }

    /// Category logits `(N, K)`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no classification head", self.name)))?;
        let maps = self.feature_maps(x)?;
        head.forward(&maps[maps.len() - 1].mean((2, 3))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<(String, Tensor)> =
            self.store.params().into_iter().map(|(n, v)| (n, v.as_tensor().clone())).collect();
        let meta = HashMap::from([
            (KEY_NAME.to_string(), self.name.clone()),
            (KEY_VERSION.to_string(), self.version.clone()),
            (KEY_INPUT.to_string(), self.input_size.to_string()),
        ]);
        write_archive(path, &tensors, meta)
    }

    /// Loads weights written by [`ConvNet::save`] or by an external tool
    /// following the same naming. Kernel sizes are read from the weights.
    pub fn load(path: &Path) -> Result<Self> {
        let (mut tensors, meta) = read_archive(path, DType::F32)?;
        let input_size: usize = meta
            .get(KEY_INPUT)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("{}: missing {KEY_INPUT} metadata", path.display())))?;
        let store = ParamStore::new(DType::F32, Device::Cpu, 0);
        let root = store.root();
        let mut take = |name: &str| take_tensor(&mut tensors, name, path);
        let mut convs = Vec::new();
        let mut in_c = 3;
        for i in 0.. {
            let wname = format!("conv{i}.weight");
            let w = match take(&wname) {
                Ok(w) => w,
                Err(_) if i > 0 => break,
                Err(e) => return Err(e),
            };
            let b = take(&format!("conv{i}.bias"))?;
            let (out_c, c, k, _) = w.dims4()?;
            if c != in_c {
                return Err(Error::ConfigMismatch {
                    name: wname,
                    expected: format!("{in_c} input channels"),
                    found: format!("{c}"),
                });
            }
            let scope = root.pp(format!("conv{i}"));
            let conv = Conv2d::new(scope, in_c, out_c, k, 2, k / 2, true)?;
            conv.weight.set(&w)?;
            conv.bias.as_ref().expect("bias").set(&b)?;
            convs.push(conv);
            in_c = out_c;
        }
        let head = match take("head.weight") {
            Ok(w) => {
                let (k, c) = w.dims2()?;
                if c != in_c {
                    return Err(Error::ConfigMismatch {
                        name: "head.weight".into(),
                        expected: format!("{in_c} input features"),
                        found: format!("{c}"),
                    });
                }
                let lin = Linear::new(root.pp("head"), c, k, None)?;
                lin.weight.set(&w)?;
                lin.bias.set(&take("head.bias")?)?;
                Some(lin)
            }
            Err(_) => None,
        };
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self {
            store,
            convs,
            head,
            input_size,
            name: meta.get(KEY_NAME).cloned().unwrap_or(stem),
            version: meta.get(KEY_VERSION).cloned().unwrap_or_else(|| "unversioned".into()),
        })
    }

    /// Top-1 accuracy on labelled crops.
    pub fn accuracy(&self, crops: &Tensor, labels: &[usize]) -> Result<f64> {
        let predicted = self.predict(crops)?;
        let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

fn take_tensor(tensors: &mut BTreeMap<String, Tensor>, name: &str, path: &Path) -> Result<Tensor> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("{}: missing {name}", path.display())))
}

impl FeatureExtractor for ConvNet {
    fn name(&self) -> &str {
        &self.name
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn feature_maps(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = images.to_dtype(DType::F32)?;
        let mut out = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            x = conv.forward(&x)?.relu()?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

impl ObjectClassifier for ConvNet {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn class_probabilities(&self, crops: &Tensor) -> Result<Tensor> {
        Ok(log_softmax(&self.logits(crops)?)?.exp()?)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTraining {
    pub widths: Vec<usize>,
    pub input_size: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64],
            input_size: 16,
            steps: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Every object crop of `split`, resized to `side`, with its category id.
pub fn labelled_crops(split: &DatasetSplit, side: usize) -> Result<(Tensor, Vec<usize>)> {
    let images: Vec<&ImageTensor> = split.samples.iter().map(|s| &s.image).collect();
    let batch = ImageTensor::batch_to_tensor(&images, &Device::Cpu, DType::F32)?;
    let rois: Vec<(usize, BoundingBox)> = split
        .samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.layout.objects.iter().map(move |o| (i, o.bbox)))
        .collect();
    let labels = split.samples.iter().flat_map(|s| s.layout.category_ids()).collect();
    Ok((crop_and_resize_batch(&batch, &rois, side)?, labels))
}

/// Trains a classifier on the ground-truth object crops of `split`.
pub fn train_object_classifier(split: &DatasetSplit, opts: &ClassifierTraining) -> Result<ConvNet> {
    let (crops, labels) = labelled_crops(split, opts.input_size)?;
    if labels.is_empty() {
        return Err(Error::InsufficientSamples("no objects to train on".into()));
    }
    let k = split.vocabulary.len();
    let mut net = ConvNet::new("desk-convnet", &opts.widths, Some(k), opts.input_size, opts.seed)?;
    net.set_version(format!(
        "{:?}-{}-seed{}-steps{}",
        opts.widths, opts.input_size, opts.seed, opts.steps
    ));
    let mut adam = Adam::new(
        net.store.params(),
        &OptimizerConfig {
            learning_rate: opts.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: opts.batch_size,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = Vec::new();
    for _ in 0..opts.steps {
        if order.len() < opts.batch_size {
            let mut fresh: Vec<usize> = (0..labels.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let pick: Vec<usize> = order.drain(..opts.batch_size.min(order.len())).collect();
        let x = crops.index_select(&ids_tensor(&pick, &Device::Cpu)?, 0)?;
        let y: Vec<usize> = pick.iter().map(|&i| labels[i]).collect();
        let loss = ac_loss(&net.logits(&x)?, &y)?;
        adam.step(&loss.backward()?)?;
    }
    Ok(net)
}
