//! Layout-conditioned image generator.
//!
//! Objects are turned into feature maps (category embedding plus latent code,
//! painted into the object's box), downsampled by a small encoder, fused in
//! layout order by a convolutional LSTM, and decoded into an RGB image. The
//! posterior estimator that maps object crops to latent Gaussians is also used
//! to regress latent codes back out of generated images.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ModelConfig;
use crate::data::crop_and_resize_batch;
use crate::error::{Error, Result};
use crate::layout::{rasterize_bbox, BoundingBox, Layout};
use crate::nn::{
    ids_tensor, BatchNorm2d, ConditionalBatchNorm2d, Conv2d, ConvLstmCell, Embedding, Linear, Mode, ParamStore, Scope,
};
use crate::raster::ImageTensor;

/// Bounds applied to every predicted log-variance.
pub const LOGVAR_CLAMP: f64 = 10.0;
const EMBEDDING_STD: f64 = 0.02;

pub type LatentCode = Vec<f32>;

/// Per-object Gaussian posteriors, one row per object.
pub struct GaussianParams {
    /// `(N, m)`
    pub mu: Tensor,
    /// `(N, m)`, clamped to `[-10, 10]`
    pub logvar: Tensor,
}

impl GaussianParams {
    pub fn len(&self) -> usize {
        self.mu.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `z = μ + exp(log σ² / 2) ⊙ ε`, differentiable in `μ` and `log σ²`.
pub fn sample_latent(g: &GaussianParams, noise: &Tensor) -> Result<Tensor> {
    if noise.dims() != g.mu.dims() {
        return Err(Error::ShapeMismatch(format!(
            "noise {:?} vs posterior {:?}",
            noise.dims(),
            g.mu.dims()
        )));
    }
    let std = (&g.logvar * 0.5)?.exp()?;
    Ok((&g.mu + (std * noise)?)?)
}

/// `count` i.i.d. standard normal codes of length `dim`.
pub fn sample_prior<R: Rng + ?Sized>(rng: &mut R, count: usize, dim: usize) -> Vec<LatentCode> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
        .collect()
}

/// Standard normal noise of shape `(count, dim)`.
pub fn standard_normal<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    dim: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let v: Vec<f32> = (0..count * dim).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, (count, dim), device)?.to_dtype(dtype)?)
}

/// Stacks latent codes into an `(N, m)` tensor.
pub fn latents_to_tensor(latents: &[LatentCode], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    if let Some(bad) = latents.iter().find(|z| z.len() != dim) {
        return Err(Error::ShapeMismatch(format!("latent of length {} where {dim} expected", bad.len())));
    }
    let flat: Vec<f32> = latents.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (latents.len(), dim), device)?.to_dtype(dtype)?)
}

pub fn tensor_to_latents(t: &Tensor) -> Result<Vec<LatentCode>> {
    Ok(t.to_dtype(DType::F32)?.to_vec2()?)
}

/// `(N, 1, S, S)` indicator of each box's rasterized cells.
pub fn box_masks(boxes: &[BoundingBox], side: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = vec![0f32; boxes.len() * side * side];
    for (i, b) in boxes.iter().enumerate() {
        let r = rasterize_bbox(b, side);
        let plane = &mut data[i * side * side..(i + 1) * side * side];
        for y in r.row0..r.row0 + r.rows {
            plane[y * side + r.col0..y * side + r.col0 + r.cols].fill(1.0);
        }
    }
    Ok(Tensor::from_vec(data, (boxes.len(), 1, side, side), device)?.to_dtype(dtype)?)
}

/// Paints `concat(w_i, z_i)` into each object's box on an `S × S` canvas.
/// `w` is `(N, n)`, `z` is `(N, m)`; the result is `(N, n + m, S, S)`.
pub fn compose_object_feature_maps(w: &Tensor, z: &Tensor, boxes: &[BoundingBox], side: usize) -> Result<Tensor> {
    let n = w.dim(0)?;
    if z.dim(0)? != n || boxes.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings, {} latents, {} boxes",
            n,
            z.dim(0)?,
            boxes.len()
        )));
    }
    let code = Tensor::cat(&[w, z], 1)?;
    let c = code.dim(1)?;
    let mask = box_masks(boxes, side, code.dtype(), code.device())?;
    Ok(code.reshape((n, c, 1, 1))?.broadcast_mul(&mask)?)
}

/// Single-object form of [`compose_object_feature_maps`]: `(n + m, S, S)`.
pub fn compose_object_feature_map(w: &Tensor, z: &Tensor, bbox: &BoundingBox, side: usize) -> Result<Tensor> {
    let maps = compose_object_feature_maps(&w.unsqueeze(0)?, &z.unsqueeze(0)?, std::slice::from_ref(bbox), side)?;
    Ok(maps.squeeze(0)?)
}

struct Estimator {
    stages: Vec<(Conv2d, ConditionalBatchNorm2d)>,
    mu: Linear,
    logvar: Linear,
}

impl Estimator {
    fn new(scope: Scope<'_>, config: &ModelConfig, num_categories: usize) -> Result<Self> {
        let mut stages = Vec::new();
        let mut in_c = 3;
        for (i, &c) in config.estimator_channels.iter().enumerate() {
            let conv = Conv2d::new(scope.pp(format!("conv{i}")), in_c, c, 3, 2, 1, false)?;
            let cbn = ConditionalBatchNorm2d::new(scope.pp(format!("cbn{i}")), c, num_categories)?;
            stages.push((conv, cbn));
            in_c = c;
        }
        let side = config.crop_size >> config.estimator_channels.len();
        let flat = in_c * side * side;
        Ok(Self {
            stages,
            mu: Linear::new(scope.pp("fc_mu"), flat, config.latent_dim, None)?,
            logvar: Linear::new(scope.pp("fc_logvar"), flat, config.latent_dim, None)?,
        })
    }

    fn forward(&self, crops: &Tensor, ids: &Tensor, mode: Mode) -> Result<GaussianParams> {
        let mut x = crops.clone();
        for (conv, cbn) in &self.stages {
            x = cbn.forward(&conv.forward(&x)?, ids, mode)?.relu()?;
        }
        let x = x.flatten_from(1)?;
        Ok(GaussianParams {
            mu: self.mu.forward(&x)?,
            logvar: self.logvar.forward(&x)?.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)?,
        })
    }
}

struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl ResBlock {
    fn new(scope: Scope<'_>, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(scope.pp("conv1"), c, c, 3, 1, 1, false)?,
            bn1: BatchNorm2d::new(scope.pp("bn1"), c)?,
            conv2: Conv2d::new(scope.pp("conv2"), c, c, 3, 1, 1, false)?,
            bn2: BatchNorm2d::new(scope.pp("bn2"), c)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, mode)?;
        Ok((x + y)?)
    }
}

/// All generator weights: estimator, embedding table, object encoder,
/// fuser, residual refiner and decoder.
pub struct Generator {
    config: ModelConfig,
    num_categories: usize,
    store: ParamStore,
    estimator: Estimator,
    embedding: Embedding,
    encoder: Vec<(Conv2d, BatchNorm2d)>,
    fuser: Vec<ConvLstmCell>,
    residual: Vec<ResBlock>,
    decoder: Vec<(Conv2d, BatchNorm2d)>,
    to_rgb: Conv2d,
}

impl Generator {
    pub fn new(config: &ModelConfig, num_categories: usize, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        if num_categories == 0 {
            return Err(Error::InvalidConfig("vocabulary is empty".into()));
        }
        let store = ParamStore::new(dtype, device.clone(), config.seed);
        let root = store.root();
        let estimator = Estimator::new(root.pp("estimator"), config, num_categories)?;
        let embedding = Embedding::new(root.pp("embedding"), num_categories, config.embedding_dim, EMBEDDING_STD)?;

        let mut encoder = Vec::new();
        let mut in_c = config.latent_dim + config.embedding_dim;
        for (i, &c) in config.encoder_channels.iter().enumerate() {
            let s = root.pp(format!("encoder.{i}"));
            encoder.push((Conv2d::new(s.pp("conv"), in_c, c, 3, 2, 1, false)?, BatchNorm2d::new(s.pp("bn"), c)?));
            in_c = c;
        }
        let mut fuser = Vec::new();
        for (l, &c) in config.clstm_channels.iter().enumerate() {
            fuser.push(ConvLstmCell::new(root.pp(format!("fuser.{l}")), in_c, c)?);
            in_c = c;
        }
        let residual = (0..config.residual_blocks)
            .map(|i| ResBlock::new(root.pp(format!("residual.{i}")), in_c))
            .collect::<Result<Vec<_>>>()?;
        let mut decoder = Vec::new();
        for (i, &c) in config.decoder_channels.iter().enumerate() {
            let s = root.pp(format!("decoder.{i}"));
            decoder.push((Conv2d::new(s.pp("conv"), in_c, c, 3, 1, 1, false)?, BatchNorm2d::new(s.pp("bn"), c)?));
            in_c = c;
        }
        let to_rgb = Conv2d::new(root.pp("to_rgb"), in_c, 3, 3, 1, 1, true)?;
        Ok(Self {
            config: config.clone(),
            num_categories,
            store,
            estimator,
            embedding,
            encoder,
            fuser,
            residual,
            decoder,
            to_rgb,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.num_categories) {
            Some(&id) => Err(Error::UnknownCategory {
                id,
                size: self.num_categories,
            }),
            None => Ok(()),
        }
    }

    /// Posterior `(μ, log σ²)` for each crop, conditioned on its category.
    pub fn estimate_latent(&self, crops: &Tensor, category_ids: &[usize], mode: Mode) -> Result<GaussianParams> {
        let (n, c, h, w) = crops.dims4()?;
        let side = self.config.crop_size;
        if c != 3 || h != side || w != side {
            return Err(Error::ShapeMismatch(format!("crops {:?}, expected (N, 3, {side}, {side})", crops.dims())));
        }
        if n != category_ids.len() {
            return Err(Error::ShapeMismatch(format!("{n} crops for {} categories", category_ids.len())));
        }
        self.check_ids(category_ids)?;
        let ids = ids_tensor(category_ids, self.device())?;
        self.estimator.forward(crops, &ids, mode)
    }

    /// Embedding-table rows, `(N, n)`.
    pub fn embed_category(&self, category_ids: &[usize]) -> Result<Tensor> {
        self.check_ids(category_ids)?;
        self.embedding.forward(&ids_tensor(category_ids, self.device())?)
    }

    pub fn embedding_table(&self) -> &Tensor {
        self.embedding.table.as_tensor()
    }

    /// Downsamples `(N, n + m, S, S)` object maps to `(N, C, h, h)`.
    pub fn encode_object_maps(&self, maps: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = maps.dims4()?;
        let s = self.config.image_size;
        let want = self.config.latent_dim + self.config.embedding_dim;
        if c != want || h != s || w != s {
            return Err(Error::ShapeMismatch(format!("object maps {:?}, expected (N, {want}, {s}, {s})", maps.dims())));
        }
        let mut x = maps.clone();
        for (conv, bn) in &self.encoder {
            x = bn.forward(&conv.forward(&x)?, mode)?.relu()?;
        }
        Ok(x)
    }

    /// Runs the convolutional LSTM over each image's object sequence.
    ///
    /// `encoded` holds the objects of all images back to back, `counts[b]`
    /// of them for image `b`. Returns the last top-layer hidden state per
    /// image, `(B, C, h, h)`. Images with fewer objects keep their state
    /// frozen once their sequence ends, so the result equals running each
    /// image on its own.
    pub fn fuse(&self, encoded: &Tensor, counts: &[usize]) -> Result<Tensor> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::EmptySequence);
        }
        let total: usize = counts.iter().sum();
        if encoded.dim(0)? != total {
            return Err(Error::ShapeMismatch(format!("{} encoded maps for {total} objects", encoded.dim(0)?)));
        }
        let offsets: Vec<usize> = counts
            .iter()
            .scan(0, |acc, &c| {
                let o = *acc;
                *acc += c;
                Some(o)
            })
            .collect();
        let steps = *counts.iter().max().unwrap();
        let (b, dtype, device) = (counts.len(), encoded.dtype(), encoded.device());

        let first = encoded.index_select(&ids_tensor(&offsets, device)?, 0)?;
        let mut states: Vec<(Tensor, Tensor)> = Vec::new();
        let mut shape_src = first.clone();
        for cell in &self.fuser {
            let z = cell.zero_state(&shape_src)?;
            states.push((z.clone(), z.clone()));
            shape_src = z;
        }
        for t in 0..steps {
            let idx: Vec<usize> = offsets.iter().zip(counts).map(|(&o, &c)| o + t.min(c - 1)).collect();
            let mut x = encoded.index_select(&ids_tensor(&idx, device)?, 0)?;
            let all_active = counts.iter().all(|&c| t < c);
            let active = if all_active {
                None
            } else {
                let m: Vec<f32> = counts.iter().map(|&c| if t < c { 1.0 } else { 0.0 }).collect();
                let m = Tensor::from_vec(m, (b, 1, 1, 1), device)?.to_dtype(dtype)?;
                let keep = (1.0 - &m)?;
                Some((m, keep))
            };
            for (cell, (h, c)) in self.fuser.iter().zip(states.iter_mut()) {
                let (h_new, c_new) = cell.step(&x, h, c)?;
                match &active {
                    None => {
                        *h = h_new.clone();
                        *c = c_new;
                    }
                    Some((m, keep)) => {
                        *h = (h_new.broadcast_mul(m)? + h.broadcast_mul(keep)?)?;
                        *c = (c_new.broadcast_mul(m)? + c.broadcast_mul(keep)?)?;
                    }
                }
                x = h_new;
            }
        }
        Ok(states.pop().expect("at least one fuser layer").0)
    }

    /// Refines `(B, C, h, h)` hidden maps and decodes them to `(B, 3, S, S)` in `[-1, 1]`.
    pub fn decode(&self, hidden: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = hidden.dims4()?;
        let hs = self.config.hidden_spatial;
        if c != self.config.hidden_channels() || h != hs || w != hs {
            return Err(Error::ShapeMismatch(format!("hidden map {:?}", hidden.dims())));
        }
        let mut x = hidden.clone();
        for block in &self.residual {
            x = block.forward(&x, mode)?;
        }
        for (conv, bn) in &self.decoder {
            let (_, _, h, w) = x.dims4()?;
            x = x.upsample_nearest2d(h * 2, w * 2)?;
            x = bn.forward(&conv.forward(&x)?, mode)?.relu()?;
        }
        Ok(self.to_rgb.forward(&x)?.tanh()?)
    }

    /// Generates one image per layout. `latents` is `(N, m)` with the
    /// objects of all layouts back to back, in layout order.
    pub fn generate_batch(&self, layouts: &[&Layout], latents: &Tensor, mode: Mode) -> Result<Tensor> {
        let counts: Vec<usize> = layouts.iter().map(|l| l.len()).collect();
        let total: usize = counts.iter().sum();
        if latents.dims() != [total, self.config.latent_dim] {
            return Err(Error::ShapeMismatch(format!(
                "latents {:?} for {total} objects of dimension {}",
                latents.dims(),
                self.config.latent_dim
            )));
        }
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::EmptyLayout);
        }
        let ids: Vec<usize> = layouts.iter().flat_map(|l| l.category_ids()).collect();
        let boxes: Vec<BoundingBox> = layouts.iter().flat_map(|l| l.objects.iter().map(|o| o.bbox)).collect();
        let w = self.embed_category(&ids)?;
        let maps = compose_object_feature_maps(&w, latents, &boxes, self.config.image_size)?;
        let encoded = self.encode_object_maps(&maps, mode)?;
        let hidden = self.fuse(&encoded, &counts)?;
        self.decode(&hidden, mode)
    }

    /// Evaluation-mode generation for a single layout.
    pub fn generate(&self, layout: &Layout, latents: &[LatentCode]) -> Result<ImageTensor> {
        if latents.len() != layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} latents for {} objects",
                latents.len(),
                layout.len()
            )));
        }
        let z = latents_to_tensor(latents, self.config.latent_dim, self.dtype(), self.device())?;
        let img = self.generate_batch(&[layout], &z, Mode::Eval)?;
        ImageTensor::from_tensor(&img)
    }

    /// Crops every object out of `images` (`(B, 3, S, S)`) and returns the
    /// estimator means, `(N, m)`. Uses the same estimator weights as
    /// [`Generator::estimate_latent`].
    pub fn regress_latents(&self, images: &Tensor, layouts: &[&Layout], mode: Mode) -> Result<Tensor> {
        if images.dim(0)? != layouts.len() {
            return Err(Error::ShapeMismatch(format!("{} images for {} layouts", images.dim(0)?, layouts.len())));
        }
        let rois: Vec<(usize, BoundingBox)> = layouts
            .iter()
            .enumerate()
            .flat_map(|(b, l)| l.objects.iter().map(move |o| (b, o.bbox)))
            .collect();
        let ids: Vec<usize> = layouts.iter().flat_map(|l| l.category_ids()).collect();
        let crops = crop_and_resize_batch(images, &rois, self.config.crop_size)?;
        Ok(self.estimate_latent(&crops, &ids, mode)?.mu)
    }
}
