//! Evaluation metrics: Inception Score, Fréchet distance, object
//! classification accuracy and a perceptual diversity score.

mod convnet;

use candle_core::{DType, Tensor, D};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use convnet::{labelled_crops, train_object_classifier, ClassifierTraining, ConvNet};

use crate::data::{crop_and_resize_batch, DatasetSplit};
use crate::error::{Error, Result};
use crate::generator::{standard_normal, Generator};
use crate::layout::{BoundingBox, Layout};
use crate::nn::Mode;
use crate::raster::ImageTensor;

pub const DEFAULT_IS_SPLITS: usize = 10;
const DISTRIBUTION_TOL: f64 = 1e-5;
const NORMALIZE_EPS: f64 = 1e-10;

/// Deterministic image → features map.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    /// Spatial activations per layer, each `(B, C, H, W)`.
    fn feature_maps(&self, images: &Tensor) -> Result<Vec<Tensor>>;
    /// Fixed-size vectors `(B, D)`; by default the pooled last layer.
    fn features(&self, images: &Tensor) -> Result<Tensor> {
        let maps = self.feature_maps(images)?;
        let last = maps.last().ok_or_else(|| Error::InvalidArgument("extractor has no layers".into()))?;
        Ok(last.mean((2, 3))?)
    }
}

/// Category classifier over square crops.
pub trait ObjectClassifier: Send + Sync {
    fn name(&self) -> &str;
    fn input_size(&self) -> usize;
    /// `(N, K)` rows summing to one.
    fn class_probabilities(&self, crops: &Tensor) -> Result<Tensor>;
    fn predict(&self, crops: &Tensor) -> Result<Vec<usize>> {
        let p = self.class_probabilities(crops)?;
        Ok(p.argmax(D::Minus1)?.to_vec1::<u32>()?.into_iter().map(|v| v as usize).collect())
    }
}

/// Raw pixels as the only layer.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn version(&self) -> &str {
        "1"
    }

    fn feature_maps(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![images.clone()])
    }
}

/// `(mean, std)` over splits of `exp(mean_x KL(p(y|x) ‖ p̄))`.
pub fn inception_score(class_probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if splits == 0 || class_probs.len() < splits {
        return Err(Error::InsufficientSamples(format!(
            "{} rows for {splits} splits",
            class_probs.len()
        )));
    }
    for (row, p) in class_probs.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOL || p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidDistribution { row, sum });
        }
    }
    let k = class_probs[0].len();
    let per = class_probs.len() / splits;
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let part = &class_probs[s * per..(s + 1) * per];
            let mut marginal = vec![0.0; k];
            for p in part {
                for (m, v) in marginal.iter_mut().zip(p) {
                    *m += v / part.len() as f64;
                }
            }
            let mean_kl = part
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&marginal)
                        .filter(|(v, _)| **v > 0.0)
                        .map(|(v, m)| v * (v.ln() - m.ln()))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / part.len() as f64;
            mean_kl.exp()
        })
        .collect();
    Ok(mean_std(&scores))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("feature rows differ in length".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Sample mean and unbiased covariance of the rows of `x`.
fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1.0);
    (mean, cov)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `f(A)` for symmetric `A` through its eigendecomposition.
fn spectral_map(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mapped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose()
}

/// Square root of a symmetric PSD matrix, negative eigenvalues clipped to 0.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(a, |l| l.max(0.0).sqrt())
}

/// A square root `S` of `Σ_r Σ_f`, built from the symmetric product
/// `M = Σ_r^{1/2} Σ_f Σ_r^{1/2}` as `S = Σ_r^{1/2} M^{1/2} Σ_r^{-1/2}`. Its
/// trace equals `Tr M^{1/2}`. `Σ_r` must be positive definite.
pub fn product_sqrt(sigma_r: &DMatrix<f64>, sigma_f: &DMatrix<f64>) -> DMatrix<f64> {
    let a = psd_sqrt(sigma_r);
    let a_inv = spectral_map(sigma_r, |l| if l > 0.0 { 1.0 / l.sqrt() } else { 0.0 });
    let m = symmetrize(&(&a * sigma_f * &a));
    a * psd_sqrt(&m) * a_inv
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn fid(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "need at least 2 samples per side, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let (r, f) = (to_matrix(real)?, to_matrix(fake)?);
    if r.ncols() != f.ncols() {
        return Err(Error::ShapeMismatch(format!("feature dims {} vs {}", r.ncols(), f.ncols())));
    }
    let (mu_r, sigma_r) = moments(&r);
    let (mu_f, sigma_f) = moments(&f);
    let a = psd_sqrt(&sigma_r);
    let m = symmetrize(&(&a * &sigma_f * &a));
    let tr_sqrt = psd_sqrt(&m).trace();
    let diff = (mu_r - mu_f).norm_squared();
    Ok((diff + sigma_r.trace() + sigma_f.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Fraction of objects in `images` (`(B, 3, S, S)`) whose crop the
/// classifier assigns to the layout's category.
pub fn classification_accuracy(images: &Tensor, layouts: &[Layout], classifier: &dyn ObjectClassifier) -> Result<f64> {
    let rois: Vec<(usize, BoundingBox)> = layouts
        .iter()
        .enumerate()
        .flat_map(|(b, l)| l.objects.iter().map(move |o| (b, o.bbox)))
        .collect();
    if rois.is_empty() {
        return Err(Error::InsufficientSamples("no objects to classify".into()));
    }
    let truth: Vec<usize> = layouts.iter().flat_map(|l| l.category_ids()).collect();
    let crops = crop_and_resize_batch(images, &rois, classifier.input_size())?;
    let predicted = classifier.predict(&crops)?;
    let correct = predicted.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

fn unit_channels(f: &Tensor) -> Result<Tensor> {
    let norm = f.sqr()?.sum_keepdim(1)?.sqrt()?;
    Ok(f.broadcast_div(&(norm + NORMALIZE_EPS)?)?)
}

/// Per-pair perceptual distance: for each layer, channel vectors are
/// unit-normalized per site, squared differences are summed over channels
/// and averaged over sites; layers are averaged with equal weight.
pub fn pair_distances(a: &Tensor, b: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Vec<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("pair shapes {:?} vs {:?}", a.dims(), b.dims())));
    }
    let fa = extractor.feature_maps(&a.to_dtype(DType::F64)?)?;
    let fb = extractor.feature_maps(&b.to_dtype(DType::F64)?)?;
    let mut total = Tensor::zeros(a.dim(0)?, DType::F64, a.device())?;
    for (x, y) in fa.iter().zip(&fb) {
        let d = (unit_channels(x)? - unit_channels(y)?)?.sqr()?.sum(1)?.mean((1, 2))?;
        total = (total + d.to_dtype(DType::F64)?)?;
    }
    Ok((total / fa.len() as f64)?.to_vec1()?)
}

/// `(mean, std)` of [`pair_distances`] over image pairs.
pub fn diversity_score(pairs: &[(ImageTensor, ImageTensor)], extractor: &dyn FeatureExtractor) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::InsufficientSamples("no image pairs".into()));
    }
    let dev = candle_core::Device::Cpu;
    let left: Vec<&ImageTensor> = pairs.iter().map(|p| &p.0).collect();
    let right: Vec<&ImageTensor> = pairs.iter().map(|p| &p.1).collect();
    let a = ImageTensor::batch_to_tensor(&left, &dev, DType::F64)?;
    let b = ImageTensor::batch_to_tensor(&right, &dev, DType::F64)?;
    Ok(mean_std(&pair_distances(&a, &b, extractor)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub extractor: String,
    pub extractor_version: String,
    pub classifier: String,
    pub is_mean: f64,
    pub is_std: f64,
    pub is_splits: usize,
    pub fid: f64,
    pub accuracy: f64,
    pub ds_mean: f64,
    pub ds_std: f64,
    pub num_images: usize,
    pub num_objects: usize,
    pub num_pairs: usize,
    pub seed: u64,
}

pub struct EvaluationOptions {
    pub seed: u64,
    pub is_splits: usize,
    pub chunk: usize,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            is_splits: DEFAULT_IS_SPLITS,
            chunk: 16,
        }
    }
}

fn tensor_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2()?)
}

/// Generates two prior samples per layout of `split` and computes all four
/// metrics. The first sample of each layout feeds IS, FID and accuracy;
/// both samples form the diversity pair.
pub fn evaluate(
    generator: &Generator,
    split: &DatasetSplit,
    extractor: &dyn FeatureExtractor,
    classifier: &dyn ObjectClassifier,
    options: &EvaluationOptions,
) -> Result<MetricReport> {
    if split.len() < 2 {
        return Err(Error::InsufficientSamples(format!("{} evaluation samples", split.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (dtype, dev) = (generator.dtype(), generator.device().clone());
    let m = generator.config().latent_dim;
    let side = classifier.input_size();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let (mut probs, mut real_feats, mut fake_feats) = (Vec::new(), Vec::new(), Vec::new());
    let mut correct = 0.0;
    let mut objects = 0;
    for chunk in split.samples.chunks(options.chunk.max(1)) {
        let layouts: Vec<&Layout> = chunk.iter().map(|s| &s.layout).collect();
        let count: usize = layouts.iter().map(|l| l.len()).sum();
        let z1 = standard_normal(&mut rng, count, m, dtype, &dev)?;
        let z2 = standard_normal(&mut rng, count, m, dtype, &dev)?;
        let a = generator.generate_batch(&layouts, &z1, Mode::Eval)?;
        let b = generator.generate_batch(&layouts, &z2, Mode::Eval)?;
        let reals: Vec<&ImageTensor> = chunk.iter().map(|s| &s.image).collect();
        let real = ImageTensor::batch_to_tensor(&reals, &dev, dtype)?;

        probs.extend(tensor_rows(&classifier.class_probabilities(&resize_batch(&a, side)?)?)?);
        real_feats.extend(tensor_rows(&extractor.features(&real)?)?);
        fake_feats.extend(tensor_rows(&extractor.features(&a)?)?);
        let owned: Vec<Layout> = layouts.iter().map(|l| (*l).clone()).collect();
        correct += classification_accuracy(&a, &owned, classifier)? * count as f64;
        objects += count;
        for i in 0..chunk.len() {
            first.push(ImageTensor::from_tensor(&a.get(i)?)?);
            second.push(ImageTensor::from_tensor(&b.get(i)?)?);
        }
    }
    let splits = options.is_splits.clamp(1, probs.len());
    let (is_mean, is_std) = inception_score(&probs, splits)?;
    let pairs: Vec<(ImageTensor, ImageTensor)> = first.into_iter().zip(second).collect();
    let (ds_mean, ds_std) = diversity_score(&pairs, extractor)?;
    Ok(MetricReport {
        extractor: extractor.name().to_string(),
        extractor_version: extractor.version().to_string(),
        classifier: classifier.name().to_string(),
        is_mean,
        is_std,
        is_splits: splits,
        fid: fid(&real_feats, &fake_feats)?,
        accuracy: correct / objects as f64,
        ds_mean,
        ds_std,
        num_images: pairs.len(),
        num_objects: objects,
        num_pairs: pairs.len(),
        seed: options.seed,
    })
}

/// Bilinear resize of whole images to `side × side`.
fn resize_batch(images: &Tensor, side: usize) -> Result<Tensor> {
    let b = images.dim(0)?;
    let rois: Vec<(usize, BoundingBox)> = (0..b).map(|i| (i, BoundingBox::FULL)).collect();
    crop_and_resize_batch(images, &rois, side)
}
