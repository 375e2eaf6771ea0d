//! Deterministic synthetic-shapes corpus.
//!
//! Each image holds 1 to 5 axis-aligned shapes drawn on a flat background,
//! one per layout object, in layout order (later shapes paint over earlier
//! ones). Boxes are pixel aligned so the layout matches the drawing exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetSplit, Sample, SplitName};
use crate::error::{Error, Result};
use crate::layout::{rasterize_bbox, BoundingBox, CategoryVocabulary, Layout, ObjectSpec};
use crate::raster::ImageTensor;

pub const SHAPE_NAMES: [&str; 4] = ["circle", "square", "triangle", "bar"];

/// Background value on every channel. Shape colors have channels in
/// `[0, 1]`, so every shape is brighter than the background.
pub const BACKGROUND: f32 = -0.8;

const MIN_OBJECTS: usize = 1;
const MAX_OBJECTS: usize = 5;
const MIN_EXTENT: f64 = 0.2;
const MAX_EXTENT: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Circle,
    Square,
    Triangle,
    Bar,
}

impl Shape {
    fn parse(name: &str) -> Result<Self> {
        match name {
            "circle" => Ok(Shape::Circle),
            "square" => Ok(Shape::Square),
            "triangle" => Ok(Shape::Triangle),
            "bar" => Ok(Shape::Bar),
            other => Err(Error::InvalidCategory(other.to_string())),
        }
    }

    /// Coverage test in box-relative coordinates `(u, v) ∈ (0, 1)²`.
    fn covers(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Square => true,
            Shape::Circle => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25,
            Shape::Triangle => (u - 0.5).abs() <= v / 2.0,
            Shape::Bar => (0.3..=0.7).contains(&v),
        }
    }
}

/// Renders `count` images of side `image_size` from `seed`.
pub fn synth_shapes(seed: u64, count: usize, categories: &[&str], image_size: usize) -> Result<DatasetSplit> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    if categories.len() < 2 {
        return Err(Error::InvalidArgument("need at least two categories".into()));
    }
    if image_size < 8 {
        return Err(Error::InvalidArgument("image_size must be at least 8".into()));
    }
    let shapes = categories.iter().map(|c| Shape::parse(c)).collect::<Result<Vec<_>>>()?;
    let vocabulary = CategoryVocabulary::new(categories.iter().copied())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|i| {
            let (image, layout) = render_one(&mut rng, &shapes, image_size);
            Sample {
                image,
                layout,
                id: format!("synth-{seed}-{i:05}"),
            }
        })
        .collect();
    Ok(DatasetSplit {
        samples,
        vocabulary,
        split_name: SplitName::Train,
    })
}

fn render_one(rng: &mut ChaCha8Rng, shapes: &[Shape], size: usize) -> (ImageTensor, Layout) {
    let mut image = ImageTensor::filled(size, BACKGROUND);
    let n = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    let lo = ((MIN_EXTENT * size as f64).round() as usize).max(2);
    let hi = ((MAX_EXTENT * size as f64).round() as usize).max(lo);
    let mut objects = Vec::with_capacity(n);
    for _ in 0..n {
        let category_id = rng.random_range(0..shapes.len());
        let h = rng.random_range(lo..=hi);
        let w = rng.random_range(lo..=hi);
        let y = rng.random_range(0..=size - h);
        let x = rng.random_range(0..=size - w);
        let color: [f32; 3] = [rng.random(), rng.random(), rng.random()];
        let bbox = BoundingBox::from_pixels([x as f64, y as f64, h as f64, w as f64], size);
        draw(&mut image, shapes[category_id], &bbox, color);
        objects.push(ObjectSpec { category_id, bbox });
    }
    (image, Layout::new(objects, size))
}

fn draw(image: &mut ImageTensor, shape: Shape, bbox: &BoundingBox, color: [f32; 3]) {
    let r = rasterize_bbox(bbox, image.side());
    for py in r.row0..r.row0 + r.rows {
        let v = (py - r.row0) as f64 + 0.5;
        for px in r.col0..r.col0 + r.cols {
            let u = (px - r.col0) as f64 + 0.5;
            if shape.covers(u / r.cols as f64, v / r.rows as f64) {
                for (c, &value) in color.iter().enumerate() {
                    image.set(c, py, px, value);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::layout::validate_layout;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = synth_shapes(7, 10, &SHAPE_NAMES, 32).unwrap();
        let b = synth_shapes(7, 10, &SHAPE_NAMES, 32).unwrap();
        assert_eq!(a.samples.len(), 10);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image.values(), y.image.values());
            assert_eq!(x.layout, y.layout);
        }
        let c = synth_shapes(8, 10, &SHAPE_NAMES, 32).unwrap();
        assert!(a.samples.iter().zip(&c.samples).any(|(x, y)| x.image != y.image));
    }

    #[test]
    fn every_object_is_visible_in_its_box() {
        let split = synth_shapes(11, 50, &SHAPE_NAMES, 32).unwrap();
        for s in &split.samples {
            for obj in &s.layout.objects {
                let r = rasterize_bbox(&obj.bbox, 32);
                let mut sum = 0.0f64;
                for c in 0..3 {
                    for y in r.row0..r.row0 + r.rows {
                        for x in r.col0..r.col0 + r.cols {
                            sum += s.image.get(c, y, x) as f64;
                        }
                    }
                }
                let mean = sum / (3 * r.rows * r.cols) as f64;
                assert!(mean > BACKGROUND as f64, "{}: object hidden", s.id);
            }
        }
    }

    #[test]
    fn layouts_validate() {
        let split = synth_shapes(3, 40, &SHAPE_NAMES, 64).unwrap();
        let config = ModelConfig::default();
        for s in &split.samples {
            assert!((1..=5).contains(&s.layout.len()));
            validate_layout(&s.layout, &config, &split.vocabulary).unwrap();
            assert_eq!(s.layout.image_size, s.image.side());
        }
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(
            synth_shapes(1, 3, &["circle", "hexagon"], 32),
            Err(Error::InvalidCategory(_))
        ));
        assert!(synth_shapes(1, 0, &SHAPE_NAMES, 32).is_err());
        assert!(synth_shapes(1, 3, &["circle"], 32).is_err());
    }
}
