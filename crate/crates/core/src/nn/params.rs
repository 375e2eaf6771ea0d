use std::collections::BTreeMap;
use std::sync::Mutex;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named trainable parameters and non-trainable buffers, initialized from a
/// seeded generator in construction order.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    params: Mutex<BTreeMap<String, Var>>,
    buffers: Mutex<BTreeMap<String, Var>>,
    rng: Mutex<ChaCha8Rng>,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device, seed: u64) -> Self {
        Self {
            device,
            dtype,
            params: Mutex::new(BTreeMap::new()),
            buffers: Mutex::new(BTreeMap::new()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    /// Trainable parameters sorted by name.
    pub fn params(&self) -> Vec<(String, Var)> {
        let map = self.params.lock().unwrap();
        map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn buffers(&self) -> Vec<(String, Var)> {
        let map = self.buffers.lock().unwrap();
        map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn param(&self, name: &str) -> Option<Var> {
        self.params.lock().unwrap().get(name).cloned()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Deep copies of every parameter and buffer, for exact comparisons and rollback.
    pub fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        self.params()
            .into_iter()
            .chain(self.buffers().into_iter().map(|(k, v)| (format!("buffer:{k}"), v)))
            .map(|(k, v)| Ok((k, v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in snapshot {
            let var = match name.strip_prefix("buffer:") {
                Some(b) => self.buffers.lock().unwrap().get(b).cloned(),
                None => self.param(name),
            };
            var.ok_or_else(|| Error::InvalidArgument(format!("unknown tensor {name}")))?
                .set(t)?;
        }
        Ok(())
    }

    fn register(&self, name: String, var: Var, buffer: bool) -> Result<Var> {
        let map = if buffer { &self.buffers } else { &self.params };
        let mut map = map.lock().unwrap();
        if map.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("tensor {name} registered twice")));
        }
        map.insert(name, var.clone());
        Ok(var)
    }

    fn tensor_from_f64(&self, data: Vec<f64>, shape: Shape) -> Result<Tensor> {
        Ok(Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    fn normal_values(&self, n: usize, std: f64) -> Vec<f64> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut rng = self.rng.lock().unwrap();
        (0..n).map(|_| dist.sample(&mut *rng)).collect()
    }
}

/// A name prefix inside a store, in the manner of a var builder.
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl AsRef<str>) -> Scope<'a> {
        Scope {
            store: self.store,
            prefix: self.path(name.as_ref()),
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn normal(&self, name: &str, shape: impl Into<Shape>, std: f64) -> Result<Var> {
        let shape = shape.into();
        let data = self.store.normal_values(shape.elem_count(), std);
        let t = self.store.tensor_from_f64(data, shape)?;
        self.store.register(self.path(name), Var::from_tensor(&t)?, false)
    }

    pub fn constant(&self, name: &str, shape: impl Into<Shape>, value: f64) -> Result<Var> {
        let shape = shape.into();
        let t = self.store.tensor_from_f64(vec![value; shape.elem_count()], shape)?;
        self.store.register(self.path(name), Var::from_tensor(&t)?, false)
    }

    pub fn from_values(&self, name: &str, shape: impl Into<Shape>, values: Vec<f64>) -> Result<Var> {
        let t = self.store.tensor_from_f64(values, shape.into())?;
        self.store.register(self.path(name), Var::from_tensor(&t)?, false)
    }

    pub fn buffer(&self, name: &str, shape: impl Into<Shape>, value: f64) -> Result<Var> {
        let shape = shape.into();
        let t = self.store.tensor_from_f64(vec![value; shape.elem_count()], shape)?;
        self.store.register(self.path(name), Var::from_tensor(&t)?, true)
    }

    pub fn normal_buffer(&self, name: &str, shape: impl Into<Shape>) -> Result<Var> {
        let shape = shape.into();
        let data = self.store.normal_values(shape.elem_count(), 1.0);
        let t = self.store.tensor_from_f64(data, shape)?;
        self.store.register(self.path(name), Var::from_tensor(&t)?, true)
    }
}
