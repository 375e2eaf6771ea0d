//! Channels-first RGB images with values in `[-1, 1]`.

use std::io::Cursor;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    side: usize,
    /// `(3, side, side)` row-major.
    values: Vec<f32>,
}

impl ImageTensor {
    pub fn new(side: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != 3 * side * side {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {side}x{side} image, got {}",
                3 * side * side,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { side, values })
    }

    pub fn filled(side: usize, value: f32) -> Self {
        Self {
            side,
            values: vec![value.clamp(-1.0, 1.0); 3 * side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.side + y) * self.side + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let s = self.side;
        self.values[(c * s + y) * s + x] = v.clamp(-1.0, 1.0);
    }

    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.values, (3, self.side, self.side), device)?.to_dtype(dtype)?)
    }

    /// Accepts `(3, S, S)` or `(1, 3, S, S)`; values are clamped into range.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.dims() {
            [1, 3, _, _] => t.squeeze(0)?,
            [3, h, w] if h == w => t.clone(),
            d => return Err(Error::ShapeMismatch(format!("expected (3, S, S), got {d:?}"))),
        };
        let side = t.dim(1)?;
        let values = t
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?
            .into_iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        Ok(Self { side, values })
    }

    /// Stacks images into a `(B, 3, S, S)` tensor.
    pub fn batch_to_tensor(images: &[&ImageTensor], device: &Device, dtype: DType) -> Result<Tensor> {
        let side = images.first().map(|i| i.side).unwrap_or(0);
        if images.iter().any(|i| i.side != side) {
            return Err(Error::ShapeMismatch("images in a batch differ in size".into()));
        }
        let mut data = Vec::with_capacity(images.len() * 3 * side * side);
        for img in images {
            data.extend_from_slice(&img.values);
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, side, side), device)?.to_dtype(dtype)?)
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        if w != h {
            return Err(Error::ShapeMismatch(format!("image is {w}x{h}, expected square")));
        }
        let side = w as usize;
        let mut values = vec![0f32; 3 * side * side];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                values[(c * side + y as usize) * side + x as usize] = p[c] as f32 / 127.5 - 1.0;
            }
        }
        Ok(Self { side, values })
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let s = self.side;
        RgbImage::from_fn(s as u32, s as u32, |x, y| {
            let px = |c: usize| {
                let v = self.get(c, y as usize, x as usize);
                ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> Result<f64> {
        if self.side != other.side {
            return Err(Error::ShapeMismatch("image sizes differ".into()));
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.values.len() as f64)
    }
}
