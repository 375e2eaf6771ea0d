use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::config::OptimizerConfig;
use crate::error::{Error, Result};

/// Adam over a fixed set of named variables. Moment estimates are created
/// lazily and can be exported for checkpoints.
pub struct Adam {
    vars: Vec<(String, Var)>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, config: &OptimizerConfig) -> Self {
        Self {
            vars,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update. Variables without a gradient are left untouched.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in &self.vars {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            // Gradients still reference the forward graph; keeping them in
            // the moments would retain every step's graph.
            let g = &g.detach();
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let m_hat = (&m / c1)?;
            let v_hat = (&v / c2)?;
            let delta = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            let next = (var.as_tensor().detach() - (delta * self.lr)?)?;
            var.set(&next)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    /// Moment tensors named `m.<var>` / `v.<var>`, plus the step count.
    pub fn state(&self) -> (u64, Vec<(String, Tensor)>) {
        let m = self.m.iter().map(|(k, t)| (format!("m.{k}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("v.{k}"), t.clone()));
        (self.step, m.chain(v).collect())
    }

    pub fn load_state(&mut self, step: u64, tensors: Vec<(String, Tensor)>) -> Result<()> {
        let shapes: BTreeMap<&str, Vec<usize>> =
            self.vars.iter().map(|(k, v)| (k.as_str(), v.dims().to_vec())).collect();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (key, t) in tensors {
            let (slot, name) = if let Some(n) = key.strip_prefix("m.") {
                (&mut m, n)
            } else if let Some(n) = key.strip_prefix("v.") {
                (&mut v, n)
            } else {
                return Err(Error::CorruptCheckpoint(format!("unexpected optimizer tensor {key}")));
            };
            let expected = shapes
                .get(name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("optimizer state for unknown tensor {name}")))?;
            if t.dims() != expected.as_slice() {
                return Err(Error::ConfigMismatch {
                    name: key.clone(),
                    expected: format!("{expected:?}"),
                    found: format!("{:?}", t.dims()),
                });
            }
            slot.insert(name.to_string(), t);
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
