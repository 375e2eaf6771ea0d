use candle_core::{DType, Tensor, Var, D};

use super::params::Scope;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; forward passes are pure.
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Fan-in scaled normal init suited to layers followed by ReLU.
fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        scope: Scope<'_>,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        Self::with_std(scope, in_c, out_c, kernel, stride, padding, bias, he_std(fan_in))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_std(
        scope: Scope<'_>,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        std: f64,
    ) -> Result<Self> {
        let weight = scope.normal("weight", (out_c, in_c, kernel, kernel), std)?;
        let bias = if bias {
            Some(scope.constant("bias", out_c, 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_with(x, self.weight.as_tensor(), self.bias.as_ref().map(Var::as_tensor), self.stride, self.padding)
    }
}

pub(crate) fn conv2d_with(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let y = x.conv2d(weight, padding, stride, 1, 1)?;
    Ok(match bias {
        Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
        None => y,
    })
}

pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(scope: Scope<'_>, in_f: usize, out_f: usize, std: Option<f64>) -> Result<Self> {
        let std = std.unwrap_or_else(|| (1.0 / in_f as f64).sqrt());
        Ok(Self {
            weight: scope.normal("weight", (out_f, in_f), std)?,
            bias: scope.constant("bias", out_f, 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear_with(x, self.weight.as_tensor(), self.bias.as_tensor())
    }
}

pub(crate) fn linear_with(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    Ok(x.matmul(&weight.t()?)?.broadcast_add(bias)?)
}

/// Per-channel normalization over `(N, H, W)` for `(N, C, H, W)` inputs.
pub struct BatchNorm2d {
    pub gamma: Option<Var>,
    pub beta: Option<Var>,
    pub running_mean: Var,
    pub running_var: Var,
}

impl BatchNorm2d {
    pub fn new(scope: Scope<'_>, channels: usize) -> Result<Self> {
        let mut bn = Self::without_affine(scope.clone(), channels)?;
        bn.gamma = Some(scope.constant("gamma", channels, 1.0)?);
        bn.beta = Some(scope.constant("beta", channels, 0.0)?);
        Ok(bn)
    }

    pub fn without_affine(scope: Scope<'_>, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: None,
            beta: None,
            running_mean: scope.buffer("running_mean", channels, 0.0)?,
            running_var: scope.buffer("running_var", channels, 1.0)?,
        })
    }

    /// Normalizes without the affine part.
    pub fn normalize(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = x.dim(1)?;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim((0, 2, 3))?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
                let n = x.elem_count() / c;
                let unbiased = (var.detach() * (n as f64 / (n.max(2) - 1) as f64))?;
                let m = BN_MOMENTUM;
                let rm = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
                let rv = ((self.running_var.as_tensor() * (1.0 - m))? + (unbiased.flatten_all()? * m)?)?;
                self.running_mean.set(&rm)?;
                self.running_var.set(&rv)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            ),
        };
        Ok(x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.normalize(x, mode)?;
        match (&self.gamma, &self.beta) {
            (Some(g), Some(b)) => {
                let c = x.dim(1)?;
                Ok(y
                    .broadcast_mul(&g.as_tensor().reshape((1, c, 1, 1))?)?
                    .broadcast_add(&b.as_tensor().reshape((1, c, 1, 1))?)?)
            }
            _ => Ok(y),
        }
    }
}

/// Batch normalization whose scale and shift are looked up per category.
pub struct ConditionalBatchNorm2d {
    bn: BatchNorm2d,
    pub gamma_table: Var,
    pub beta_table: Var,
}

impl ConditionalBatchNorm2d {
    pub fn new(scope: Scope<'_>, channels: usize, num_categories: usize) -> Result<Self> {
        Ok(Self {
            bn: BatchNorm2d::without_affine(scope.clone(), channels)?,
            gamma_table: scope.constant("gamma_table", (num_categories, channels), 1.0)?,
            beta_table: scope.constant("beta_table", (num_categories, channels), 0.0)?,
        })
    }

    /// `ids` is a `(N,)` u32 tensor of category ids.
    pub fn forward(&self, x: &Tensor, ids: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let y = self.bn.normalize(x, mode)?;
        let g = self.gamma_table.as_tensor().index_select(ids, 0)?.reshape((n, c, 1, 1))?;
        let b = self.beta_table.as_tensor().index_select(ids, 0)?.reshape((n, c, 1, 1))?;
        Ok(y.broadcast_mul(&g)?.broadcast_add(&b)?)
    }
}

pub struct Embedding {
    pub table: Var,
}

impl Embedding {
    pub fn new(scope: Scope<'_>, num: usize, dim: usize, std: f64) -> Result<Self> {
        Ok(Self {
            table: scope.normal("table", (num, dim), std)?,
        })
    }

    pub fn num_embeddings(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        Ok(self.table.as_tensor().index_select(ids, 0)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// `log(1 + exp(x))` without overflow; the derivative at 0 is exactly 1/2.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let zero = x.zeros_like()?;
    let neg = x.minimum(&zero)?;
    let pos = x.maximum(&zero)?;
    let a = (neg.exp()? + 1.0)?.log()?;
    let b = (&pos + (pos.neg()?.exp()? + 1.0)?.log()?)?;
    Ok(((a + b)? - std::f64::consts::LN_2)?)
}

pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let lse = x.log_sum_exp(D::Minus1)?.unsqueeze(D::Minus1)?;
    Ok(x.broadcast_sub(&lse)?)
}

pub fn ids_tensor(ids: &[usize], device: &candle_core::Device) -> Result<Tensor> {
    let v: Vec<u32> = ids.iter().map(|&i| i as u32).collect();
    Ok(Tensor::from_vec(v, ids.len(), device)?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
