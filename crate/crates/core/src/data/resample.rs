//! Bilinear crop-and-resize.
//!
//! Sampling uses pixel centers: output index `j` of `out` maps to source
//! coordinate `start + (j + 0.5) * len / out - 0.5`, clamped into the source
//! range `[start, start + len - 1]`. The source range is the box rasterized on
//! the pixel grid, so pixels outside every box never contribute to a crop.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::layout::{rasterize_bbox, BoundingBox, CellRect};
use crate::raster::ImageTensor;

/// Two-tap interpolation weights for one output index.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub(crate) fn axis_taps(start: usize, len: usize, out: usize) -> Vec<Tap> {
    let last = (start + len - 1) as f64;
    let scale = len as f64 / out as f64;
    (0..out)
        .map(|j| {
            let src = (start as f64 + (j as f64 + 0.5) * scale - 0.5).clamp(start as f64, last);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(start + len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Dense `(out, src_size)` interpolation matrix, row-major.
pub(crate) fn interpolation_matrix(start: usize, len: usize, out: usize, src_size: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * src_size];
    for (j, t) in axis_taps(start, len, out).into_iter().enumerate() {
        m[j * src_size + t.lo] += 1.0 - t.frac;
        m[j * src_size + t.hi] += t.frac;
    }
    m
}

/// Resamples the `rect` region of a `(channels, h, w)` buffer to `out_h x out_w`.
pub fn resize_region(
    values: &[f32],
    channels: usize,
    (h, w): (usize, usize),
    rect: CellRect,
    (out_h, out_w): (usize, usize),
) -> Result<Vec<f32>> {
    if rect.rows == 0 || rect.cols == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::DegenerateBox);
    }
    if rect.row0 + rect.rows > h || rect.col0 + rect.cols > w || values.len() != channels * h * w {
        return Err(Error::ShapeMismatch(format!(
            "region {rect:?} does not fit a {channels}x{h}x{w} buffer"
        )));
    }
    let ty = axis_taps(rect.row0, rect.rows, out_h);
    let tx = axis_taps(rect.col0, rect.cols, out_w);
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let plane = &values[c * h * w..(c + 1) * h * w];
        for ry in &ty {
            let row_lo = &plane[ry.lo * w..(ry.lo + 1) * w];
            let row_hi = &plane[ry.hi * w..(ry.hi + 1) * w];
            for rx in &tx {
                let top = row_lo[rx.lo] as f64 * (1.0 - rx.frac) + row_lo[rx.hi] as f64 * rx.frac;
                let bot = row_hi[rx.lo] as f64 * (1.0 - rx.frac) + row_hi[rx.hi] as f64 * rx.frac;
                out.push((top * (1.0 - ry.frac) + bot * ry.frac) as f32);
            }
        }
    }
    Ok(out)
}

/// Crops the box from `image` and resamples it to `out_side x out_side`.
pub fn crop_and_resize(image: &ImageTensor, bbox: &BoundingBox, out_side: usize) -> Result<ImageTensor> {
    let s = image.side();
    let rect = rasterize_bbox(bbox, s);
    let values = resize_region(image.values(), 3, (s, s), rect, (out_side, out_side))?;
    ImageTensor::new(out_side, values)
}

/// Differentiable batched crop-and-resize.
///
/// `images` is `(B, 3, H, W)`; each roi names a batch index and a box. Returns
/// `(rois, 3, out, out)` computed as `Ry · I · Rxᵀ`, so gradients flow to the
/// image pixels.
pub fn crop_and_resize_batch(images: &Tensor, rois: &[(usize, BoundingBox)], out_side: usize) -> Result<Tensor> {
    let (b, _c, h, w) = images.dims4()?;
    if h != w {
        return Err(Error::ShapeMismatch(format!("expected square images, got {h}x{w}")));
    }
    if let Some((i, _)) = rois.iter().find(|(i, _)| *i >= b) {
        return Err(Error::ShapeMismatch(format!("roi image index {i} >= batch {b}")));
    }
    let device: &Device = images.device();
    let mut ry = Vec::with_capacity(rois.len() * out_side * h);
    let mut rxt = Vec::with_capacity(rois.len() * w * out_side);
    for (_, bbox) in rois {
        let rect = rasterize_bbox(bbox, h);
        ry.extend(interpolation_matrix(rect.row0, rect.rows, out_side, h));
        let rx = interpolation_matrix(rect.col0, rect.cols, out_side, w);
        for col in 0..w {
            for j in 0..out_side {
                rxt.push(rx[j * w + col]);
            }
        }
    }
    let n = rois.len();
    let dtype = images.dtype();
    let ry = Tensor::from_vec(ry, (n, 1, out_side, h), device)?.to_dtype(dtype)?;
    let rxt = Tensor::from_vec(rxt, (n, 1, w, out_side), device)?.to_dtype(dtype)?;
    let idx: Vec<u32> = rois.iter().map(|(i, _)| *i as u32).collect();
    let idx = Tensor::from_vec(idx, n, device)?;
    let picked = images.index_select(&idx, 0)?;
    Ok(ry.broadcast_matmul(&picked)?.broadcast_matmul(&rxt)?)
}
