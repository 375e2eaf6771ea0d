//! Writes a train and a test split of the synthetic-shapes dataset.
//!
//!     cargo run --release --example synth_dataset -- data/shapes 32

use std::path::PathBuf;

use layout2im::data::{synth_shapes, write_split, SHAPE_NAMES};

fn main() -> layout2im::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data/shapes".into()));
    let size: usize = args.next().map(|s| s.parse().expect("image size")).unwrap_or(32);

    for (name, seed, count) in [("train", 0, 512), ("test", 1, 64)] {
        let split = synth_shapes(seed, count, &SHAPE_NAMES, size)?;
        let objects: usize = split.samples.iter().map(|s| s.layout.len()).sum();
        let manifest = write_split(&split, &root.join(name))?;
        println!("{name}: {} images, {objects} objects -> {}", split.len(), manifest.display());
    }
    println!("categories: {:?}", SHAPE_NAMES);
    Ok(())
}
