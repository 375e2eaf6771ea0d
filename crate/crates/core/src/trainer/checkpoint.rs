//! Single-file checkpoints: a safetensors archive whose metadata holds a JSON
//! manifest (config, vocabulary, iteration, optimizer steps, rng position).

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::layout::CategoryVocabulary;
use crate::nn::ParamStore;

pub const CHECKPOINT_EXTENSION: &str = "safetensors";
const MANIFEST_KEY: &str = "manifest";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngState {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// Decimal string; JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::CorruptCheckpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::CorruptCheckpoint("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocabulary: CategoryVocabulary,
    pub iteration: u64,
    pub g_opt_steps: u64,
    pub d_opt_steps: u64,
    pub rng: RngState,
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:08}.{CHECKPOINT_EXTENSION}"))
}

/// Checkpoints in `dir`, oldest first.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let iter = name
            .strip_prefix("ckpt_")
            .and_then(|r| r.strip_suffix(&format!(".{CHECKPOINT_EXTENSION}")))
            .and_then(|d| d.parse::<u64>().ok());
        if let Some(i) = iter {
            out.push((i, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    Ok(list_checkpoints(dir)?.pop().map(|(_, p)| p))
}

/// Deletes all but the newest `keep` checkpoints.
pub fn prune_checkpoints(dir: &Path, keep: usize) -> Result<()> {
    let all = list_checkpoints(dir)?;
    let drop = all.len().saturating_sub(keep);
    for (_, path) in &all[..drop] {
        std::fs::remove_file(path)?;
    }
    Ok(())
}

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        _ => (
            Dtype::F32,
            flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
    })
}

fn from_view(view: &TensorView<'_>, dtype: DType, name: &str) -> Result<Tensor> {
    let data = view.data();
    let shape = view.shape().to_vec();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(Error::CorruptCheckpoint(format!("{name}: unsupported dtype {other:?}"))),
    };
    Ok(t.to_dtype(dtype)?)
}

fn store_tensors(prefix: &str, store: &ParamStore, out: &mut Vec<(String, Tensor)>) {
    for (name, var) in store.params() {
        out.push((format!("{prefix}.param.{name}"), var.as_tensor().clone()));
    }
    for (name, var) in store.buffers() {
        out.push((format!("{prefix}.buffer.{name}"), var.as_tensor().clone()));
    }
}

fn store_targets(prefix: &str, store: &ParamStore, out: &mut Vec<(String, Var)>) {
    for (name, var) in store.params() {
        out.push((format!("{prefix}.param.{name}"), var));
    }
    for (name, var) in store.buffers() {
        out.push((format!("{prefix}.buffer.{name}"), var));
    }
}

/// Writes the whole training state atomically (temp file, then rename).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    store_tensors("gen", state.generator.store(), &mut tensors);
    store_tensors("disc", state.discriminators.store(), &mut tensors);
    let (g_steps, g_state) = state.g_opt.state();
    let (d_steps, d_state) = state.d_opt.state();
    tensors.extend(g_state.into_iter().map(|(n, t)| (format!("opt.gen.{n}"), t)));
    tensors.extend(d_state.into_iter().map(|(n, t)| (format!("opt.disc.{n}"), t)));

    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        config: state.config().clone(),
        vocabulary: state.vocabulary.clone(),
        iteration: state.iteration,
        g_opt_steps: g_steps,
        d_opt_steps: d_steps,
        rng: RngState::capture(&state.rng),
    };
    let meta = HashMap::from([(MANIFEST_KEY.to_string(), serde_json::to_string(&manifest)?)]);
    write_archive(path, &tensors, meta)
}

/// Atomically writes named tensors plus string metadata as safetensors.
pub(crate) fn write_archive(path: &Path, tensors: &[(String, Tensor)], meta: HashMap<String, String>) -> Result<()> {
    let encoded: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(n, t)| {
            let (dt, bytes) = to_bytes(t)?;
            Ok((n.clone(), dt, t.dims().to_vec(), bytes))
        })
        .collect::<Result<_>>()?;
    let views = encoded
        .iter()
        .map(|(n, dt, shape, bytes)| {
            TensorView::new(*dt, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => e.into(),
    })
}

fn parse_manifest(bytes: &[u8]) -> Result<CheckpointManifest> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let text = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(MANIFEST_KEY))
        .ok_or_else(|| Error::CorruptCheckpoint("missing manifest".into()))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unknown format version {}", manifest.format_version)));
    }
    Ok(manifest)
}

/// Reads every tensor (converted to `dtype`) and the metadata map.
pub(crate) fn read_archive(path: &Path, dtype: DType) -> Result<(BTreeMap<String, Tensor>, HashMap<String, String>)> {
    let bytes = read_file(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let tensors = st
        .tensors()
        .into_iter()
        .map(|(n, v)| Ok((n.clone(), from_view(&v, dtype, &n)?)))
        .collect::<Result<_>>()?;
    Ok((tensors, meta))
}

pub fn read_checkpoint_manifest(path: &Path) -> Result<CheckpointManifest> {
    parse_manifest(&read_file(path)?)
}

struct Archive<'a> {
    tensors: BTreeMap<String, TensorView<'a>>,
}

impl<'a> Archive<'a> {
    fn open(bytes: &'a [u8]) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(Self {
            tensors: st.tensors().into_iter().collect(),
        })
    }

    fn take(&mut self, name: &str, expected: &[usize], dtype: DType) -> Result<Tensor> {
        let view = self.tensors.remove(name).ok_or_else(|| Error::ConfigMismatch {
            name: name.to_string(),
            expected: format!("{expected:?}"),
            found: "missing".into(),
        })?;
        if view.shape() != expected {
            return Err(Error::ConfigMismatch {
                name: name.to_string(),
                expected: format!("{expected:?}"),
                found: format!("{:?}", view.shape()),
            });
        }
        from_view(&view, dtype, name)
    }

    fn load_into(&mut self, targets: &[(String, Var)]) -> Result<()> {
        for (name, var) in targets {
            let t = self.take(name, var.dims(), var.dtype())?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// Optimizer moments under `prefix`, checked against `shapes`.
    fn optimizer(&mut self, prefix: &str, vars: &[(String, Var)]) -> Result<Vec<(String, Tensor)>> {
        let keys: Vec<String> = self
            .tensors
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        let shapes: HashMap<&str, (&[usize], DType)> =
            vars.iter().map(|(n, v)| (n.as_str(), (v.dims(), v.dtype()))).collect();
        keys.into_iter()
            .map(|key| {
                let local = &key[prefix.len()..];
                let var_name = local.get(2..).unwrap_or("");
                let (shape, dtype) = shapes.get(var_name).copied().ok_or_else(|| Error::ConfigMismatch {
                    name: key.clone(),
                    expected: "absent".into(),
                    found: format!("{:?}", self.tensors[&key].shape()),
                })?;
                let t = self.take(&key, shape, dtype)?;
                Ok((local.to_string(), t))
            })
            .collect()
    }

    fn finish(self) -> Result<()> {
        match self.tensors.into_iter().next() {
            Some((name, view)) => Err(Error::ConfigMismatch {
                name,
                expected: "absent".into(),
                found: format!("{:?}", view.shape()),
            }),
            None => Ok(()),
        }
    }
}

/// Restores a full training state. Shapes are checked against a model built
/// from `config`; the first disagreement is reported by array name.
pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<TrainState> {
    let bytes = read_file(path)?;
    let manifest = parse_manifest(&bytes)?;
    let mut archive = Archive::open(&bytes)?;
    let mut state = TrainState::new(config, manifest.vocabulary.clone())?;
    let mut targets = Vec::new();
    store_targets("gen", state.generator.store(), &mut targets);
    store_targets("disc", state.discriminators.store(), &mut targets);
    archive.load_into(&targets)?;
    let g_vars = state.generator.store().params();
    let d_vars = state.discriminators.store().params();
    let g_state = archive.optimizer("opt.gen.", &g_vars)?;
    let d_state = archive.optimizer("opt.disc.", &d_vars)?;
    archive.finish()?;
    state.g_opt.load_state(manifest.g_opt_steps, g_state)?;
    state.d_opt.load_state(manifest.d_opt_steps, d_state)?;
    state.iteration = manifest.iteration;
    state.rng = manifest.rng.restore()?;
    Ok(state)
}

/// A generator restored for inference.
pub struct LoadedGenerator {
    pub generator: Generator,
    pub vocabulary: CategoryVocabulary,
    pub iteration: u64,
    /// `<file stem>`, e.g. `ckpt_00002000`.
    pub version: String,
}

/// Loads only the generator weights, using the config stored in the checkpoint.
pub fn load_generator(path: &Path) -> Result<LoadedGenerator> {
    let bytes = read_file(path)?;
    let manifest = parse_manifest(&bytes)?;
    let mut archive = Archive::open(&bytes)?;
    let generator = Generator::new(&manifest.config, manifest.vocabulary.len(), DType::F32, &Device::Cpu)?;
    let mut targets = Vec::new();
    store_targets("gen", generator.store(), &mut targets);
    archive.load_into(&targets)?;
    let version = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("checkpoint")
        .to_string();
    Ok(LoadedGenerator {
        generator,
        vocabulary: manifest.vocabulary,
        iteration: manifest.iteration,
        version,
    })
}
