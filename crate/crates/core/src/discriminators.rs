//! Spectrally normalized image and object discriminators.

use candle_core::{DType, Device, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scope, SnConv2d, SnLinear, SpectralNorm};

/// Seed offset so discriminator init differs from the generator's.
const SEED_OFFSET: u64 = 0x5eed;

fn trunk(scope: Scope<'_>, channels: &[usize]) -> Result<Vec<SnConv2d>> {
    let mut in_c = 3;
    let mut out = Vec::new();
    for (i, &c) in channels.iter().enumerate() {
        out.push(SnConv2d::new(scope.pp(format!("conv{i}")), in_c, c, 4, 2, 1)?);
        in_c = c;
    }
    Ok(out)
}

fn run_trunk(convs: &[SnConv2d], x: &Tensor) -> Result<Tensor> {
    let mut x = x.clone();
    for conv in convs {
        x = conv.forward(&x)?.relu()?;
    }
    Ok(x.mean((2, 3))?)
}

fn check_side(x: &Tensor, side: usize, what: &str) -> Result<()> {
    let (_, c, h, w) = x.dims4()?;
    if c != 3 || h != side || w != side {
        return Err(Error::ShapeMismatch(format!("{what} {:?}, expected (N, 3, {side}, {side})", x.dims())));
    }
    Ok(())
}

/// `D_img` over whole images and `D_obj` over object crops, sharing one
/// parameter store. No normalization or stochastic layers, so both are
/// deterministic in any mode.
pub struct Discriminators {
    store: ParamStore,
    image_size: usize,
    crop_size: usize,
    num_categories: usize,
    img_convs: Vec<SnConv2d>,
    img_head: SnLinear,
    obj_convs: Vec<SnConv2d>,
    obj_real: SnLinear,
    obj_class: SnLinear,
}

impl Discriminators {
    pub fn new(config: &ModelConfig, num_categories: usize, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(dtype, device.clone(), config.seed.wrapping_add(SEED_OFFSET));
        let root = store.root();
        let img = root.pp("d_img");
        let obj = root.pp("d_obj");
        let img_convs = trunk(img.clone(), &config.d_img_channels)?;
        let img_head = SnLinear::new(img.pp("head"), *config.d_img_channels.last().unwrap(), 1)?;
        let obj_convs = trunk(obj.clone(), &config.d_obj_channels)?;
        let width = *config.d_obj_channels.last().unwrap();
        let obj_real = SnLinear::new(obj.pp("real"), width, 1)?;
        let obj_class = SnLinear::new(obj.pp("class"), width, num_categories)?;
        Ok(Self {
            store,
            image_size: config.image_size,
            crop_size: config.crop_size,
            num_categories,
            img_convs,
            img_head,
            obj_convs,
            obj_real,
            obj_class,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// Realness logits `(B,)` for `(B, 3, S, S)` images.
    pub fn d_image(&self, images: &Tensor) -> Result<Tensor> {
        check_side(images, self.image_size, "images")?;
        let f = run_trunk(&self.img_convs, images)?;
        Ok(self.img_head.forward(&f)?.squeeze(1)?)
    }

    /// Realness logits `(N,)` and category logits `(N, K)` for object crops.
    pub fn d_object(&self, crops: &Tensor) -> Result<(Tensor, Tensor)> {
        check_side(crops, self.crop_size, "crops")?;
        let f = run_trunk(&self.obj_convs, crops)?;
        Ok((self.obj_real.forward(&f)?.squeeze(1)?, self.obj_class.forward(&f)?))
    }

    pub fn spectral_norms(&self) -> Vec<&SpectralNorm> {
        self.img_convs
            .iter()
            .map(|c| &c.sn)
            .chain(std::iter::once(&self.img_head.sn))
            .chain(self.obj_convs.iter().map(|c| &c.sn))
            .chain([&self.obj_real.sn, &self.obj_class.sn])
            .collect()
    }

    /// One power iteration on every constrained weight.
    pub fn power_iteration(&self) -> Result<()> {
        self.spectral_norms().iter().try_for_each(|sn| sn.power_iteration())
    }

    /// Brings every `σ` estimate in line with the current weights. Returns
    /// the largest number of power iterations any weight needed.
    pub fn refine_spectral_norms(&self) -> Result<usize> {
        self.spectral_norms().iter().try_fold(0, |most, sn| Ok(most.max(sn.refine()?)))
    }

    /// Exact top singular value of every normalized weight, by SVD.
    pub fn normalized_singular_values(&self) -> Result<Vec<(String, f64)>> {
        self.spectral_norms()
            .iter()
            .map(|sn| {
                let w = sn.normalized_weight()?;
                let rows = w.dims()[0];
                let cols = w.elem_count() / rows;
                let v: Vec<f64> = w.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
                Ok((sn.name().to_string(), crate::nn::top_singular_value(&v, rows, cols)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ids_tensor, log_softmax};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, shape: (usize, usize, usize, usize)) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        crate::generator::standard_normal(&mut rng, 1, n, DType::F32, &Device::Cpu)
            .unwrap()
            .tanh()
            .unwrap()
            .reshape(shape)
            .unwrap()
    }

    fn vals(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn image_logits() {
        let d = Discriminators::new(&ModelConfig::default(), 171, DType::F32, &Device::Cpu).unwrap();
        let x = noise(1, (8, 3, 64, 64));
        let a = d.d_image(&x).unwrap();
        assert_eq!(a.dims(), &[8]);
        assert_eq!(vals(&a), vals(&d.d_image(&x).unwrap()));
        let bad = noise(1, (1, 3, 32, 32));
        assert!(matches!(d.d_image(&bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn object_logits() {
        let d = Discriminators::new(&ModelConfig::default(), 171, DType::F32, &Device::Cpu).unwrap();
        let x = noise(2, (5, 3, 32, 32));
        let (r, c) = d.d_object(&x).unwrap();
        assert_eq!(r.dims(), &[5]);
        assert_eq!(c.dims(), &[5, 171]);
        let (r0, c0) = d.d_object(&Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert!(vals(&r0).iter().chain(&vals(&c0)).all(|v| v.is_finite()));

        let perm = [3usize, 0, 4, 1, 2];
        let xp = x.index_select(&ids_tensor(&perm, &Device::Cpu).unwrap(), 0).unwrap();
        let (rp, cp) = d.d_object(&xp).unwrap();
        let (rv, cv): (Vec<f32>, Vec<Vec<f32>>) = (vals(&r), c.to_vec2().unwrap());
        let (rpv, cpv): (Vec<f32>, Vec<Vec<f32>>) = (vals(&rp), cp.to_vec2().unwrap());
        for (i, &p) in perm.iter().enumerate() {
            assert!((rpv[i] - rv[p]).abs() < 1e-5);
            for k in 0..171 {
                assert!((cpv[i][k] - cv[p][k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn weights_are_unit_norm_after_power_iteration() {
        let d = Discriminators::new(&ModelConfig::desk(), 4, DType::F64, &Device::Cpu).unwrap();
        d.power_iteration().unwrap();
        let sv = d.normalized_singular_values().unwrap();
        assert_eq!(sv.len(), 4 + 1 + 3 + 2);
        for (name, s) in sv {
            assert!(s <= 1.0 + 1e-3, "{name}: {s}");
        }
    }

    #[test]
    fn classification_loss_reaches_the_shared_trunk() {
        let d = Discriminators::new(&ModelConfig::desk(), 4, DType::F32, &Device::Cpu).unwrap();
        let x = noise(3, (3, 3, 16, 16));
        let (_, logits) = d.d_object(&x).unwrap();
        let ids = ids_tensor(&[0, 2, 3], &Device::Cpu).unwrap();
        let loss = log_softmax(&logits)
            .unwrap()
            .gather(&ids.unsqueeze(1).unwrap(), 1)
            .unwrap()
            .mean_all()
            .unwrap()
            .neg()
            .unwrap();
        let grads = loss.backward().unwrap();
        let w = d.store().param("d_obj.conv0.weight").unwrap();
        let g = vals(grads.get(w.as_tensor()).unwrap());
        assert!(g.iter().any(|v| *v != 0.0));
        let real_head = d.store().param("d_obj.real.weight").unwrap();
        assert!(grads.get(real_head.as_tensor()).is_none());
    }
}
