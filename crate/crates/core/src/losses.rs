//! Generator and discriminator objectives.
//!
//! Tensor-valued losses are differentiable; [`LossReport`] carries their
//! scalar values for one training step.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::generator::GaussianParams;
use crate::nn::{ids_tensor, log_softmax, softplus};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// KL divergence to the standard normal, summed over latent dimensions and
/// averaged over objects.
pub fn kl_loss(g: &GaussianParams) -> Result<Tensor> {
    same_shape(&g.mu, &g.logvar, "kl")?;
    let per_dim = ((g.mu.sqr()? + g.logvar.exp()?)? - &g.logvar)?;
    let per_obj = ((per_dim - 1.0)?.sum(1)? * 0.5)?;
    Ok(per_obj.mean_all()?)
}

/// Mean absolute difference over every pixel and channel.
pub fn image_l1(target: &Tensor, recon: &Tensor) -> Result<Tensor> {
    same_shape(target, recon, "image_l1")?;
    Ok((target - recon)?.abs()?.mean_all()?)
}

/// `‖z − z′‖₁` per object, averaged over objects.
pub fn latent_l1(sampled: &Tensor, regressed: &Tensor) -> Result<Tensor> {
    same_shape(sampled, regressed, "latent_l1")?;
    Ok((sampled - regressed)?.abs()?.sum(1)?.mean_all()?)
}

/// `mean softplus(−real) + mean softplus(fake)`.
pub fn gan_d_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    let real = softplus(&real_logits.neg()?)?.mean_all()?;
    let fake = softplus(fake_logits)?.mean_all()?;
    Ok((real + fake)?)
}

/// Non-saturating generator loss, `mean softplus(−fake)`.
pub fn gan_g_loss(fake_logits: &Tensor) -> Result<Tensor> {
    Ok(softplus(&fake_logits.neg()?)?.mean_all()?)
}

/// Mean softmax cross-entropy of `(N, K)` logits against labels.
pub fn ac_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} logit rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::UnknownCategory { id: bad, size: k });
    }
    let idx = ids_tensor(labels, logits.device())?.unsqueeze(1)?;
    Ok(log_softmax(logits)?.gather(&idx, 1)?.mean_all()?.neg()?)
}

/// Scalar values of every objective for one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub kl: f64,
    pub img_l1: f64,
    pub latent_l1: f64,
    pub adv_img_g: f64,
    pub adv_obj_g: f64,
    pub ac_obj_g: f64,
    pub d_img_loss: f64,
    pub d_obj_loss: f64,
    pub d_ac_loss: f64,
    pub total_g: f64,
}

impl LossReport {
    pub fn generator_terms(&self) -> [(&'static str, f64); 6] {
        [
            ("kl", self.kl),
            ("img_l1", self.img_l1),
            ("latent_l1", self.latent_l1),
            ("adv_img_g", self.adv_img_g),
            ("adv_obj_g", self.adv_obj_g),
            ("ac_obj_g", self.ac_obj_g),
        ]
    }
}

/// `λ1·kl + λ2·img_l1 + λ3·latent_l1 + λ4·adv_img_g + λ5·adv_obj_g + λ6·ac_obj_g`.
pub fn total_generator_loss(report: &LossReport, weights: &LossWeights) -> Result<f64> {
    let terms = report.generator_terms();
    if let Some((name, _)) = terms.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { term: name.to_string() });
    }
    Ok(terms
        .iter()
        .zip(weights.as_array())
        .fold(0.0, |acc, ((_, v), w)| acc + w * v))
}
