//! The `layout2im` command: synth-data, train, evaluate, generate, serve.
//!
//! Exit codes: 0 success, 2 usage, 3 data or runtime error, 4 divergence.
//! Progress goes to stderr; results go to files.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::ModelConfig;
use crate::data::{load_layout_dataset, synth_shapes, write_split, DatasetSplit, LoadOptions, SHAPE_NAMES};
use crate::error::{Error, Result};
use crate::generator::LatentCode;
use crate::layout::LayoutJson;
use crate::metrics::{evaluate, train_object_classifier, ClassifierTraining, ConvNet, EvaluationOptions};
use crate::service::{self, GenerateRequest, Model, ServiceError, ServiceState};
use crate::trainer::{latest_checkpoint, train_with_progress, LOG_FILE};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

pub const LATENTS_FILE: &str = "latents.json";

#[derive(Debug, Parser)]
#[command(name = "layout2im", version, about = "Layout-to-image generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic synthetic-shapes dataset.
    SynthData(SynthArgs),
    /// Train (or resume training) a model.
    Train(TrainArgs),
    /// Compute IS, FID, accuracy and diversity for a checkpoint.
    Evaluate(EvaluateArgs),
    /// Generate images for one layout file.
    Generate(GenerateArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Full,
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML or JSON config; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base config when no file is given.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Dataset directory (containing manifest.json) or manifest path.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 300_000)]
    pub iterations: u64,
    #[arg(long)]
    pub checkpoint_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Print a progress line every this many iterations.
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `desk` trains a small conv net on the real crops of `--data`;
    /// anything else is a path to conv-net weights.
    #[arg(long, default_value = "desk")]
    pub extractor: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_IS_SPLITS)]
    pub is_splits: usize,
    #[arg(long, default_value_t = 300)]
    pub classifier_steps: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layout JSON file.
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long, default_value_t = service::DEFAULT_NUM_SAMPLES)]
    pub num_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Served checkpoint; without one the service starts degraded.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = service::DEFAULT_MAX_BATCH)]
    pub max_batch: usize,
}

/// Sidecar written next to generated images.
#[derive(Debug, Serialize)]
pub struct LatentsFile {
    pub model_version: String,
    pub seed: u64,
    pub images: Vec<String>,
    pub latents: Vec<Vec<LatentCode>>,
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteLoss { .. } => EXIT_DIVERGED,
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Resolves a dataset argument to `(manifest, image directory)`.
fn manifest_paths(data: &Path) -> (PathBuf, PathBuf) {
    let manifest = if data.is_dir() { data.join("manifest.json") } else { data.to_path_buf() };
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    (manifest, dir)
}

/// Loads a dataset with permissive filters: any object count the config
/// accepts and no minimum box area.
pub fn load_data(data: &Path, config: &ModelConfig) -> Result<DatasetSplit> {
    let (manifest, dir) = manifest_paths(data);
    let opts = LoadOptions {
        image_size: config.image_size,
        min_objects: 1,
        max_objects: config.max_objects,
        min_box_area: 0.0,
    };
    load_layout_dataset(&manifest, &dir, &opts)
}

fn train_config(args: &TrainArgs) -> Result<ModelConfig> {
    let mut config = match &args.config {
        Some(path) => ModelConfig::load(path)?,
        None => match args.preset {
            Preset::Full => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
        },
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(b) = args.batch_size {
        config.optimizer.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        config.optimizer.learning_rate = lr;
    }
    config.validate()?;
    Ok(config)
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let split = synth_shapes(args.seed, args.count as usize, &SHAPE_NAMES, args.image_size)?;
    let manifest = write_split(&split, &args.out)?;
    eprintln!("wrote {} samples to {}", split.len(), manifest.display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let config = train_config(args)?;
    let split = load_data(&args.data, &config)?;
    if let Some(path) = latest_checkpoint(&args.checkpoint_dir)? {
        eprintln!("resuming from {}", path.display());
    }
    eprintln!("training on {} samples for {} iterations", split.len(), args.iterations);
    let every = args.log_every.max(1);
    let state = train_with_progress(&config, &split, args.iterations, &args.checkpoint_dir, |r| {
        if r.iteration % every == 0 {
            eprintln!(
                "iter {} total_g {:.4} img_l1 {:.4} kl {:.4} d_img {:.4} d_obj {:.4}",
                r.iteration, r.report.total_g, r.report.img_l1, r.report.kl, r.report.d_img_loss, r.report.d_obj_loss
            );
        }
    })?;
    eprintln!(
        "done at iteration {}; log at {}",
        state.iteration,
        args.checkpoint_dir.join(LOG_FILE).display()
    );
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let model = Model::load(&args.checkpoint)?;
    let config = model.generator.config().clone();
    let split = load_data(&args.data, &config)?;
    let net = if args.extractor == "desk" {
        eprintln!("training desk classifier on {} samples", split.len());
        train_object_classifier(
            &split,
            &ClassifierTraining {
                input_size: config.crop_size,
                steps: args.classifier_steps,
                seed: args.seed,
                ..ClassifierTraining::default()
            },
        )?
    } else {
        ConvNet::load(Path::new(&args.extractor))?
    };
    let opts = EvaluationOptions {
        seed: args.seed,
        is_splits: args.is_splits,
        ..EvaluationOptions::default()
    };
    let report = evaluate(&model.generator, &split, &net, &net, &opts)?;
    write_json(&args.out, &report)?;
    eprintln!(
        "IS {:.3} FID {:.3} accuracy {:.3} DS {:.3}",
        report.is_mean, report.fid, report.accuracy, report.ds_mean
    );
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run_generate(args: &GenerateArgs) -> Result<()> {
    let model = Model::load(&args.checkpoint)?;
    if !args.layout.exists() {
        return Err(Error::FileNotFound(args.layout.clone()));
    }
    let text = std::fs::read_to_string(&args.layout)?;
    let layout: LayoutJson =
        serde_json::from_str(&text).map_err(|e| Error::ParseError(format!("{}: {e}", args.layout.display())))?;
    let request = GenerateRequest {
        layout,
        num_samples: args.num_samples,
        seed: Some(args.seed),
        latent_overrides: Default::default(),
    };
    let out = service::generate_images(&model, &request, service::DEFAULT_MAX_BATCH).map_err(|e| match e {
        ServiceError::Core(e) => e,
        other => Error::InvalidArgument(other.body().message),
    })?;
    std::fs::create_dir_all(&args.out)?;
    let mut names = Vec::new();
    for (i, img) in out.images.iter().enumerate() {
        let name = format!("sample_{i:02}.png");
        img.save_png(&args.out.join(&name))?;
        names.push(name);
    }
    let sidecar = LatentsFile {
        model_version: model.version.clone(),
        seed: out.seed,
        images: names,
        latents: out.latents,
    };
    write_json(&args.out.join(LATENTS_FILE), &sidecar)?;
    eprintln!("wrote {} images to {}", sidecar.images.len(), args.out.display());
    Ok(())
}

fn run_serve(args: &ServeArgs) -> Result<()> {
    let model = args.checkpoint.as_deref().map(Model::load).transpose()?;
    let state = ServiceState::new(model, args.max_batch);
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("bad address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        service::serve(listener, state).await
    })?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Generate(a) => run_generate(a),
        Command::Serve(a) => run_serve(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                Error::NonFiniteLoss { term } => eprintln!("error: training diverged, {term} is not finite"),
                _ => eprintln!("error: {} ({})", e, e.name()),
            }
            exit_code(&e)
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        assert!(Cli::try_parse_from(["layout2im", "synth-data", "--out", "x", "--count", "0"]).is_err());
        let cli = Cli::try_parse_from(["layout2im", "train", "--data", "d", "--checkpoint-dir", "c", "--preset", "desk", "--seed", "4"]).unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let cfg = train_config(&args).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.image_size, ModelConfig::desk().image_size);
        assert_eq!(run(["layout2im", "bogus"]), EXIT_USAGE);
    }

    #[test]
    fn config_file_with_flag_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, ModelConfig::desk().to_toml_string()).unwrap();
        let cli = Cli::try_parse_from([
            "layout2im",
            "train",
            "--config",
            path.to_str().unwrap(),
            "--data",
            "d",
            "--checkpoint-dir",
            "c",
            "--learning-rate",
            "0.003",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let cfg = train_config(&args).unwrap();
        assert_eq!(cfg.optimizer.learning_rate, 0.003);
        assert_eq!(cfg.latent_dim, ModelConfig::desk().latent_dim);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::NonFiniteLoss { term: "kl".into() }), EXIT_DIVERGED);
        assert_eq!(exit_code(&Error::FileNotFound("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), EXIT_USAGE);
    }
}
