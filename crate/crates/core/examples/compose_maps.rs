//! Shows how a layout becomes per-object feature maps: each object's
//! `[embedding, latent]` vector fills its rasterized box on the hidden grid.
//!
//!     cargo run --example compose_maps

use candle_core::{Device, Tensor};
use layout2im::generator::compose_object_feature_maps;
use layout2im::layout::{rasterize_bbox, BoundingBox};

fn main() -> layout2im::Result<()> {
    let side = 8;
    let boxes = [
        BoundingBox::new(0.0, 0.0, 0.5, 0.5),
        BoundingBox::new(0.3, 0.4, 0.6, 0.25),
        BoundingBox::new(0.49, 0.49, 0.01, 0.01),
    ];
    let dev = Device::Cpu;
    // One channel of "embedding" and one of "latent" per object, so the
    // maps are easy to read.
    let w = Tensor::new(&[[1f32], [2.0], [3.0]], &dev)?;
    let z = Tensor::new(&[[-1f32], [-2.0], [-3.0]], &dev)?;
    let maps = compose_object_feature_maps(&w, &z, &boxes, side)?;
    println!("maps: {:?} (objects, channels, rows, cols)", maps.dims());

    for (i, b) in boxes.iter().enumerate() {
        let cell = rasterize_bbox(b, side);
        println!(
            "\nobject {i}: box {:?} -> rows {}..{}, cols {}..{}",
            b.as_array(),
            cell.row0,
            cell.row0 + cell.rows,
            cell.col0,
            cell.col0 + cell.cols
        );
        let plane: Vec<Vec<f32>> = maps.get(i)?.get(0)?.to_vec2()?;
        for row in plane {
            let line: String = row.iter().map(|v| if *v == 0.0 { " ." } else { " #" }).collect();
            println!("  {line}");
        }
    }
    Ok(())
}
