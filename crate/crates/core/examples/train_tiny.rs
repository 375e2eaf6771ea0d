//! Trains the desk-scale model on synthetic shapes and prints the losses.
//! Rerunning resumes from the newest checkpoint in the run directory.
//!
//!     cargo run --release --example train_tiny -- runs/tiny 500

use std::path::PathBuf;

use layout2im::data::{synth_shapes, SHAPE_NAMES};
use layout2im::trainer::{train_with_progress, LOG_FILE};
use layout2im::ModelConfig;

fn main() -> layout2im::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "runs/tiny".into()));
    let iterations: u64 = args.next().map(|s| s.parse().expect("iterations")).unwrap_or(500);

    let config = ModelConfig {
        checkpoint_interval: 100,
        ..ModelConfig::desk()
    };
    let split = synth_shapes(0, 64, &SHAPE_NAMES, config.image_size)?;
    let state = train_with_progress(&config, &split, iterations, &dir, |r| {
        if r.iteration % 25 == 0 {
            let l = &r.report;
            println!(
                "{:>6} {:>7.1}s  img_l1 {:.3}  kl {:.3}  latent_l1 {:.3}  adv {:.3}/{:.3}  ac {:.3}  d {:.3}/{:.3}/{:.3}",
                r.iteration, r.wall_time, l.img_l1, l.kl, l.latent_l1, l.adv_img_g, l.adv_obj_g, l.ac_obj_g,
                l.d_img_loss, l.d_obj_loss, l.d_ac_loss
            );
        }
    })?;
    println!("stopped at iteration {}; log in {}", state.iteration, dir.join(LOG_FILE).display());
    Ok(())
}
