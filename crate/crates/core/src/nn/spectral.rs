//! Spectrally normalized convolution and linear layers.
//!
//! Each wrapped weight keeps persistent left/right singular-vector estimates
//! `u`, `v`. [`SpectralNorm::refine`] runs warm-started power iterations
//! until `σ = uᵀ W v` settles; forward passes divide the weight by `σ`, with
//! gradients flowing through `W` only.

use candle_core::{DType, Tensor, Var};

use super::layers::{conv2d_with, linear_with};
use super::params::Scope;
use crate::error::Result;

/// Power iterations run once at construction so the first estimate is already tight.
pub const WARMUP_ITERATIONS: usize = 500;
/// Cap and relative tolerance for [`SpectralNorm::refine`].
pub const MAX_REFINE_ITERATIONS: usize = 1000;
const REFINE_TOL: f64 = 1e-7;
const NORM_EPS: f64 = 1e-12;

pub struct SpectralNorm {
    pub weight: Var,
    u: Var,
    v: Var,
    name: String,
}

/// Scales `x` to unit length in place and returns its original norm.
fn normalize(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    x.iter_mut().for_each(|a| *a /= norm + NORM_EPS);
    norm
}

fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_all()?.sqrt()?;
    Ok(x.broadcast_div(&(norm + NORM_EPS)?)?)
}

impl SpectralNorm {
    fn new(scope: &Scope<'_>, weight: Var, name: &str) -> Result<Self> {
        let dims = weight.dims();
        let rows = dims[0];
        let cols = weight.elem_count() / rows;
        let u = scope.normal_buffer("sn_u", rows)?;
        let v = scope.buffer("sn_v", cols, 0.0)?;
        u.set(&l2_normalize(u.as_tensor())?)?;
        let sn = Self {
            weight,
            u,
            v,
            name: name.to_string(),
        };
        for _ in 0..WARMUP_ITERATIONS {
            sn.power_iteration()?;
        }
        Ok(sn)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The weight as a `(out, rest)` matrix.
    pub fn matrix(&self) -> Result<Tensor> {
        let rows = self.weight.dims()[0];
        Ok(self.weight.as_tensor().reshape((rows, ()))?)
    }

    pub fn power_iteration(&self) -> Result<()> {
        let w = self.matrix()?.detach();
        let u = self.u.as_tensor().unsqueeze(1)?;
        let v = l2_normalize(&w.t()?.matmul(&u)?)?;
        let u = l2_normalize(&w.matmul(&v)?)?;
        self.v.set(&v.squeeze(1)?)?;
        self.u.set(&u.squeeze(1)?)?;
        Ok(())
    }

    /// Power iterations from the stored vectors until the relative change of
    /// `σ` drops below tolerance. Returns the number of iterations run.
    ///
    /// Runs on a plain f64 copy of the weight: the matrices are small and
    /// per-op tensor overhead would dominate.
    pub fn refine(&self) -> Result<usize> {
        let w = self.matrix()?.detach();
        let (rows, cols) = w.dims2()?;
        let dtype = w.dtype();
        let w: Vec<f64> = w.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let mut u: Vec<f64> = self.u.as_tensor().to_dtype(DType::F64)?.to_vec1()?;
        let mut v = vec![0.0; cols];
        let mut prev = f64::NAN;
        let mut iterations = MAX_REFINE_ITERATIONS;
        for i in 1..=MAX_REFINE_ITERATIONS {
            v.iter_mut().for_each(|x| *x = 0.0);
            for (r, &ur) in u.iter().enumerate() {
                for (vc, &wrc) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                    *vc += wrc * ur;
                }
            }
            normalize(&mut v);
            for (r, ur) in u.iter_mut().enumerate() {
                *ur = w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            // After normalizing, uᵀ W v equals the norm of W v.
            let sigma = normalize(&mut u);
            if (sigma - prev).abs() <= REFINE_TOL * sigma {
                iterations = i;
                break;
            }
            prev = sigma;
        }
        let device = self.u.as_tensor().device().clone();
        self.u.set(&Tensor::from_vec(u, rows, &device)?.to_dtype(dtype)?)?;
        self.v.set(&Tensor::from_vec(v, cols, &device)?.to_dtype(dtype)?)?;
        Ok(iterations)
    }

    /// Current estimate `uᵀ W v`, differentiable in `W`.
    pub fn sigma(&self) -> Result<Tensor> {
        let u = self.u.as_detached_tensor().unsqueeze(0)?;
        let v = self.v.as_detached_tensor().unsqueeze(1)?;
        Ok(u.matmul(&self.matrix()?)?.matmul(&v)?.reshape(())?)
    }

    pub fn normalized_weight(&self) -> Result<Tensor> {
        Ok(self.weight.as_tensor().broadcast_div(&self.sigma()?)?)
    }
}

pub struct SnConv2d {
    pub sn: SpectralNorm,
    pub bias: Var,
    stride: usize,
    padding: usize,
}

impl SnConv2d {
    pub fn new(
        scope: Scope<'_>,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        let weight = scope.normal("weight", (out_c, in_c, kernel, kernel), (2.0 / fan_in as f64).sqrt())?;
        let bias = scope.constant("bias", out_c, 0.0)?;
        let sn = SpectralNorm::new(&scope, weight, &format!("{}.weight", scope.prefix()))?;
        Ok(Self {
            sn,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_with(
            x,
            &self.sn.normalized_weight()?,
            Some(self.bias.as_tensor()),
            self.stride,
            self.padding,
        )
    }
}

pub struct SnLinear {
    pub sn: SpectralNorm,
    pub bias: Var,
}

impl SnLinear {
    pub fn new(scope: Scope<'_>, in_f: usize, out_f: usize) -> Result<Self> {
        let weight = scope.normal("weight", (out_f, in_f), (1.0 / in_f as f64).sqrt())?;
        let bias = scope.constant("bias", out_f, 0.0)?;
        let sn = SpectralNorm::new(&scope, weight, &format!("{}.weight", scope.prefix()))?;
        Ok(Self { sn, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear_with(x, &self.sn.normalized_weight()?, self.bias.as_tensor())
    }
}

/// Largest singular value of a `(rows, cols)` row-major matrix, by SVD.
pub fn top_singular_value(values: &[f64], rows: usize, cols: usize) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, values);
    m.singular_values().max()
}
