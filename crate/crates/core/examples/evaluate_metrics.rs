//! Scores a checkpoint on a freshly generated synthetic test split with all
//! four metrics, using a conv net trained on real crops as the classifier
//! and feature extractor.
//!
//!     cargo run --release --example evaluate_metrics -- runs/tiny/ckpt_00000500.safetensors

use std::path::PathBuf;

use layout2im::data::{synth_shapes, SHAPE_NAMES};
use layout2im::metrics::{evaluate, labelled_crops, train_object_classifier, ClassifierTraining, EvaluationOptions};
use layout2im::trainer::{latest_checkpoint, load_generator};

fn main() -> layout2im::Result<()> {
    let ckpt = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => latest_checkpoint("runs/tiny".as_ref())?.expect("no checkpoint; run the train_tiny example first"),
    };
    let loaded = load_generator(&ckpt)?;
    let config = loaded.generator.config();
    let train = synth_shapes(0, 256, &SHAPE_NAMES, config.image_size)?;
    let test = synth_shapes(1, 100, &SHAPE_NAMES, config.image_size)?;

    let net = train_object_classifier(
        &train,
        &ClassifierTraining {
            input_size: config.crop_size,
            ..ClassifierTraining::default()
        },
    )?;
    let (crops, labels) = labelled_crops(&test, config.crop_size)?;
    println!("classifier accuracy on real test crops: {:.3}", net.accuracy(&crops, &labels)?);

    let report = evaluate(&loaded.generator, &test, &net, &net, &EvaluationOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
