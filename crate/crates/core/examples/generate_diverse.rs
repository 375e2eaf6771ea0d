//! Samples several images for one layout from a checkpoint, each with fresh
//! prior latents, and writes them side by side into a PNG strip.
//!
//!     cargo run --release --example generate_diverse -- runs/tiny/ckpt_00000500.safetensors out.png

use std::path::PathBuf;

use layout2im::generator::sample_prior;
use layout2im::layout::{validate_layout, BoundingBox, Layout, ObjectSpec};
use layout2im::raster::ImageTensor;
use layout2im::trainer::{latest_checkpoint, load_generator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> layout2im::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = match args.next() {
        Some(p) => PathBuf::from(p),
        None => latest_checkpoint("runs/tiny".as_ref())?.expect("no checkpoint; run the train_tiny example first"),
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "diverse.png".into()));

    let loaded = load_generator(&ckpt)?;
    let g = &loaded.generator;
    let config = g.config();
    let id = |name: &str| loaded.vocabulary.id(name).expect("category in vocabulary");
    let layout = Layout::new(
        vec![
            ObjectSpec { category_id: id("circle"), bbox: BoundingBox::new(0.05, 0.1, 0.45, 0.45) },
            ObjectSpec { category_id: id("bar"), bbox: BoundingBox::new(0.5, 0.55, 0.4, 0.4) },
        ],
        config.image_size,
    );
    validate_layout(&layout, config, &loaded.vocabulary)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples: Vec<ImageTensor> = (0..3)
        .map(|_| g.generate(&layout, &sample_prior(&mut rng, layout.len(), config.latent_dim)))
        .collect::<layout2im::Result<_>>()?;
    for (i, pair) in samples.windows(2).enumerate() {
        println!("mean |I{} - I{}| = {:.4}", i, i + 1, pair[0].mean_abs_diff(&pair[1])?);
    }

    let side = config.image_size as u32;
    let mut strip = image::RgbImage::new(side * samples.len() as u32, side);
    for (k, img) in samples.iter().enumerate() {
        image::imageops::replace(&mut strip, &img.to_rgb8(), (k as u32 * side) as i64, 0);
    }
    strip.save(&out).map_err(layout2im::Error::from)?;
    println!("wrote {} ({} samples from {})", out.display(), samples.len(), loaded.version);
    Ok(())
}
