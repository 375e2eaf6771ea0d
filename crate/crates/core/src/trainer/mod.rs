//! Adversarial training: one discriminator update then one generator update
//! per step, with checkpointing and a JSON-lines loss log.

mod checkpoint;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub(crate) use checkpoint::{read_archive, write_archive};
pub use checkpoint::{
    checkpoint_path, latest_checkpoint, list_checkpoints, load_checkpoint, load_generator, prune_checkpoints,
    read_checkpoint_manifest, save_checkpoint, CheckpointManifest, LoadedGenerator, RngState, CHECKPOINT_EXTENSION,
};

use crate::config::ModelConfig;
use crate::data::{crop_and_resize_batch, DatasetSplit, Sample};
use crate::discriminators::Discriminators;
use crate::error::{Error, Result};
use crate::generator::{sample_latent, standard_normal, GaussianParams, Generator};
use crate::layout::{validate_layout, BoundingBox, CategoryVocabulary, Layout};
use crate::losses::{ac_loss, gan_d_loss, gan_g_loss, image_l1, kl_loss, latent_l1, total_generator_loss, LossReport};
use crate::nn::{scalar_f64, Adam, Mode};
use crate::raster::ImageTensor;

pub const LOG_FILE: &str = "train_log.jsonl";

/// Everything that changes during training.
pub struct TrainState {
    pub generator: Generator,
    pub discriminators: Discriminators,
    pub vocabulary: CategoryVocabulary,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

/// Forward tensors of one step, shared by both updates.
pub struct StepTensors {
    pub layouts: Vec<Layout>,
    pub category_ids: Vec<usize>,
    pub real_images: Tensor,
    pub real_crops: Tensor,
    pub posterior: GaussianParams,
    pub z_sampled: Tensor,
    /// Î, generated from posterior latents.
    pub reconstructed: Tensor,
    /// I′, generated from prior latents.
    pub sampled: Tensor,
    pub z_regressed: Tensor,
}

/// Differentiable generator objectives for one step.
pub struct GeneratorObjectives {
    pub kl: Tensor,
    pub img_l1: Tensor,
    pub latent_l1: Tensor,
    pub adv_img: Tensor,
    pub adv_obj: Tensor,
    pub ac_obj: Tensor,
}

#[derive(Debug)]
pub struct StepOutput {
    pub report: LossReport,
    pub reconstructed: Tensor,
    pub sampled: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    pub wall_time: f64,
    #[serde(flatten)]
    pub report: LossReport,
}

fn checked(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term: term.into() })
    }
}

impl TrainState {
    pub fn new(config: &ModelConfig, vocabulary: CategoryVocabulary) -> Result<Self> {
        let device = Device::Cpu;
        let k = vocabulary.len();
        let generator = Generator::new(config, k, DType::F32, &device)?;
        let discriminators = Discriminators::new(config, k, DType::F32, &device)?;
        let g_opt = Adam::new(generator.store().params(), &config.optimizer);
        let d_opt = Adam::new(discriminators.store().params(), &config.optimizer);
        Ok(Self {
            generator,
            discriminators,
            vocabulary,
            g_opt,
            d_opt,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.generator.config()
    }

    /// Steps 1–4: crop real objects, estimate posteriors, sample latents,
    /// generate both paths from the same layouts and regress the prior latents.
    pub fn forward_paths(&mut self, batch: &[&Sample]) -> Result<StepTensors> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let config = self.config().clone();
        let layouts = batch
            .iter()
            .map(|s| validate_layout(&s.layout, &config, &self.vocabulary))
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<&ImageTensor> = batch.iter().map(|s| &s.image).collect();
        if let Some(img) = images.iter().find(|i| i.side() != config.image_size) {
            return Err(Error::ShapeMismatch(format!(
                "image side {} where {} expected",
                img.side(),
                config.image_size
            )));
        }
        let (dtype, device) = (self.generator.dtype(), self.generator.device().clone());
        let real_images = ImageTensor::batch_to_tensor(&images, &device, dtype)?;
        let rois: Vec<(usize, BoundingBox)> = layouts
            .iter()
            .enumerate()
            .flat_map(|(b, l)| l.objects.iter().map(move |o| (b, o.bbox)))
            .collect();
        let category_ids: Vec<usize> = layouts.iter().flat_map(|l| l.category_ids()).collect();
        let n = category_ids.len();
        let m = config.latent_dim;

        let real_crops = crop_and_resize_batch(&real_images, &rois, config.crop_size)?;
        let posterior = self.generator.estimate_latent(&real_crops, &category_ids, Mode::Train)?;
        let noise = standard_normal(&mut self.rng, n, m, dtype, &device)?;
        let z_r = sample_latent(&posterior, &noise)?;
        let z_s = standard_normal(&mut self.rng, n, m, dtype, &device)?;

        let both: Vec<&Layout> = layouts.iter().chain(layouts.iter()).collect();
        let generated = self
            .generator
            .generate_batch(&both, &Tensor::cat(&[&z_r, &z_s], 0)?, Mode::Train)?;
        let b = layouts.len();
        let reconstructed = generated.narrow(0, 0, b)?;
        let sampled = generated.narrow(0, b, b)?;
        let refs: Vec<&Layout> = layouts.iter().collect();
        let z_regressed = self.generator.regress_latents(&sampled, &refs, Mode::Train)?;
        Ok(StepTensors {
            layouts,
            category_ids,
            real_images,
            real_crops,
            posterior,
            z_sampled: z_s,
            reconstructed,
            sampled,
            z_regressed,
        })
    }

    fn fake_crops(&self, t: &StepTensors, images: &Tensor) -> Result<Tensor> {
        let b = t.layouts.len();
        let rois: Vec<(usize, BoundingBox)> = t
            .layouts
            .iter()
            .chain(t.layouts.iter())
            .enumerate()
            .flat_map(|(i, l)| l.objects.iter().map(move |o| (i, o.bbox)))
            .collect();
        debug_assert_eq!(images.dim(0).ok(), Some(2 * b));
        crop_and_resize_batch(images, &rois, self.config().crop_size)
    }

    /// Step 5: one discriminator update on real data against detached fakes,
    /// then the spectral-norm estimates are refreshed for the new weights so
    /// the generator update sees properly constrained discriminators.
    /// Returns `(d_img, d_obj, d_ac)`.
    pub fn discriminator_update(&mut self, t: &StepTensors) -> Result<(f64, f64, f64)> {
        let d = &self.discriminators;
        let fakes = Tensor::cat(&[&t.reconstructed, &t.sampled], 0)?.detach();
        let fake_crops = self.fake_crops(t, &fakes)?;

        let d_img = gan_d_loss(&d.d_image(&t.real_images)?, &d.d_image(&fakes)?)?;
        let (real_obj, real_cls) = d.d_object(&t.real_crops)?;
        let (fake_obj, _) = d.d_object(&fake_crops)?;
        let d_obj = gan_d_loss(&real_obj, &fake_obj)?;
        let d_ac = ac_loss(&real_cls, &t.category_ids)?;
        let values = (
            checked("d_img_loss", scalar_f64(&d_img)?)?,
            checked("d_obj_loss", scalar_f64(&d_obj)?)?,
            checked("d_ac_loss", scalar_f64(&d_ac)?)?,
        );
        let grads = ((d_img + d_obj)? + d_ac)?.backward()?;
        self.d_opt.step(&grads)?;
        self.discriminators.refine_spectral_norms()?;
        Ok(values)
    }

    /// The six generator terms against the current discriminators.
    pub fn generator_objectives(&self, t: &StepTensors) -> Result<GeneratorObjectives> {
        let d = &self.discriminators;
        let fakes = Tensor::cat(&[&t.reconstructed, &t.sampled], 0)?;
        let fake_crops = self.fake_crops(t, &fakes)?;
        let (obj_logits, cls_logits) = d.d_object(&fake_crops)?;
        let labels: Vec<usize> = t.category_ids.iter().chain(&t.category_ids).copied().collect();
        Ok(GeneratorObjectives {
            kl: kl_loss(&t.posterior)?,
            img_l1: image_l1(&t.real_images, &t.reconstructed)?,
            latent_l1: latent_l1(&t.z_sampled, &t.z_regressed)?,
            adv_img: gan_g_loss(&d.d_image(&fakes)?)?,
            adv_obj: gan_g_loss(&obj_logits)?,
            ac_obj: ac_loss(&cls_logits, &labels)?,
        })
    }

    /// Step 6: one generator update on the weighted total. The report's
    /// discriminator fields are left at zero.
    pub fn generator_update(&mut self, t: &StepTensors) -> Result<LossReport> {
        let o = self.generator_objectives(t)?;
        let mut report = LossReport {
            kl: scalar_f64(&o.kl)?,
            img_l1: scalar_f64(&o.img_l1)?,
            latent_l1: scalar_f64(&o.latent_l1)?,
            adv_img_g: scalar_f64(&o.adv_img)?,
            adv_obj_g: scalar_f64(&o.adv_obj)?,
            ac_obj_g: scalar_f64(&o.ac_obj)?,
            ..LossReport::default()
        };
        let w = &self.config().loss_weights;
        report.total_g = total_generator_loss(&report, w)?;
        let total = [
            (o.kl, w.lambda_kl),
            (o.img_l1, w.lambda_img_l1),
            (o.latent_l1, w.lambda_latent_l1),
            (o.adv_img, w.lambda_adv_img),
            (o.adv_obj, w.lambda_adv_obj),
            (o.ac_obj, w.lambda_ac_obj),
        ]
        .into_iter()
        .try_fold(None::<Tensor>, |acc, (t, l)| -> Result<_> {
            let term = (t * l)?;
            Ok(Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            }))
        })?
        .expect("six terms");
        let grads = total.backward()?;
        self.g_opt.step(&grads)?;
        Ok(report)
    }

    /// One full training step. On any error, including a non-finite loss,
    /// the state is restored to what it was before the call.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<StepOutput> {
        let g_snap = self.generator.store().snapshot()?;
        let d_snap = self.discriminators.store().snapshot()?;
        let (g_step, g_state) = self.g_opt.state();
        let (d_step, d_state) = self.d_opt.state();
        let rng = self.rng.clone();
        match self.step_inner(batch) {
            Ok(out) => {
                self.iteration += 1;
                Ok(out)
            }
            Err(e) => {
                self.generator.store().restore(&g_snap)?;
                self.discriminators.store().restore(&d_snap)?;
                self.g_opt.load_state(g_step, g_state)?;
                self.d_opt.load_state(d_step, d_state)?;
                self.rng = rng;
                Err(e)
            }
        }
    }

    fn step_inner(&mut self, batch: &[&Sample]) -> Result<StepOutput> {
        let t = self.forward_paths(batch)?;
        let (d_img, d_obj, d_ac) = self.discriminator_update(&t)?;
        let mut report = self.generator_update(&t)?;
        report.d_img_loss = d_img;
        report.d_obj_loss = d_obj;
        report.d_ac_loss = d_ac;
        Ok(StepOutput {
            report,
            reconstructed: t.reconstructed.detach(),
            sampled: t.sampled.detach(),
        })
    }
}

/// Batch `step` of the run, with the sample order reshuffled every epoch
/// from `seed + epoch`.
fn epoch_batches(split: &DatasetSplit, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..split.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch)));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Trains for `iterations` further steps, resuming from the newest
/// checkpoint in `checkpoint_dir` if there is one.
pub fn train(config: &ModelConfig, split: &DatasetSplit, iterations: u64, checkpoint_dir: &Path) -> Result<TrainState> {
    train_with_progress(config, split, iterations, checkpoint_dir, |_| {})
}

pub fn train_with_progress(
    config: &ModelConfig,
    split: &DatasetSplit,
    iterations: u64,
    checkpoint_dir: &Path,
    mut progress: impl FnMut(&LogRecord),
) -> Result<TrainState> {
    config.validate()?;
    if split.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    std::fs::create_dir_all(checkpoint_dir)?;
    let mut state = match latest_checkpoint(checkpoint_dir)? {
        Some(path) => {
            let state = load_checkpoint(&path, config)?;
            if state.vocabulary != split.vocabulary {
                return Err(Error::ConfigMismatch {
                    name: "vocabulary".into(),
                    expected: format!("{:?}", state.vocabulary.names()),
                    found: format!("{:?}", split.vocabulary.names()),
                });
            }
            state
        }
        None => TrainState::new(config, split.vocabulary.clone())?,
    };
    let log_path: PathBuf = checkpoint_dir.join(LOG_FILE);
    let mut log = OpenOptions::new().create(true).append(true).open(&log_path)?;
    let batch_size = config.optimizer.batch_size.min(split.len());
    let per_epoch = split.len().div_ceil(batch_size) as u64;
    let start = Instant::now();
    let end = state.iteration + iterations;
    let mut cached: Option<(u64, Vec<Vec<usize>>)> = None;
    while state.iteration < end {
        let epoch = state.iteration / per_epoch;
        if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            cached = Some((epoch, epoch_batches(split, batch_size, config.seed, epoch)));
        }
        let idx = &cached.as_ref().unwrap().1[(state.iteration % per_epoch) as usize];
        let batch: Vec<&Sample> = idx.iter().map(|&i| &split.samples[i]).collect();
        let out = state.train_step(&batch)?;
        let record = LogRecord {
            iteration: state.iteration,
            wall_time: start.elapsed().as_secs_f64(),
            report: out.report,
        };
        writeln!(log, "{}", serde_json::to_string(&record)?)?;
        progress(&record);
        if state.iteration % config.checkpoint_interval.max(1) == 0 || state.iteration == end {
            save_checkpoint(&state, &checkpoint_path(checkpoint_dir, state.iteration))?;
            prune_checkpoints(checkpoint_dir, config.keep_checkpoints.max(1))?;
        }
    }
    log.flush()?;
    Ok(state)
}

/// Parses a JSON-lines loss log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => e.into(),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
