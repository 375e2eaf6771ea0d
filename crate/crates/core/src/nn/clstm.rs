use candle_core::Tensor;

use super::layers::{sigmoid, Conv2d};
use super::params::Scope;
use crate::error::Result;

/// Convolutional LSTM cell. Gates are computed by one 3×3 convolution over
/// `concat(x, h)` and split as `[input, forget, output, candidate]`.
pub struct ConvLstmCell {
    conv: Conv2d,
    hidden: usize,
}

impl ConvLstmCell {
    pub fn new(scope: Scope<'_>, in_c: usize, hidden: usize) -> Result<Self> {
        let fan_in = (in_c + hidden) * 9;
        let conv = Conv2d::with_std(scope, in_c + hidden, 4 * hidden, 3, 1, 1, true, (1.0 / fan_in as f64).sqrt())?;
        let bias = conv.bias.as_ref().expect("gate conv has a bias");
        let mut init = vec![0.0f64; 4 * hidden];
        init[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        let t = Tensor::new(init, bias.device())?.to_dtype(bias.dtype())?;
        bias.set(&t)?;
        Ok(Self { conv, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One step. Returns `(h, c)`.
    pub fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let gates = self.conv.forward(&Tensor::cat(&[x, h], 1)?)?;
        let chunks = gates.chunk(4, 1)?;
        let i = sigmoid(&chunks[0])?;
        let f = sigmoid(&chunks[1])?;
        let o = sigmoid(&chunks[2])?;
        let g = chunks[3].tanh()?;
        let c = ((f * c)? + (i * g)?)?;
        let h = (o * c.tanh()?)?;
        Ok((h, c))
    }

    pub fn zero_state(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, hh, ww) = x.dims4()?;
        Ok(Tensor::zeros((b, self.hidden, hh, ww), x.dtype(), x.device())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn step_matches_scalar_gates() {
        let store = ParamStore::new(DType::F64, Device::Cpu, 2);
        let cell = ConvLstmCell::new(store.root().pp("cell"), 2, 3).unwrap();
        let x = Tensor::new(&[0.3f64, -0.2], &Device::Cpu).unwrap().reshape((1, 2, 1, 1)).unwrap();
        let h0 = cell.zero_state(&x).unwrap();
        let (h, c) = cell.step(&x, &h0, &h0).unwrap();
        // On a 1×1 grid only the kernel centre touches the input.
        let w: Vec<f64> = cell.conv.weight.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = cell.conv.bias.as_ref().unwrap().as_tensor().to_vec1().unwrap();
        let xin = [0.3, -0.2, 0.0, 0.0, 0.0];
        let gate = |k: usize| -> f64 { b[k] + (0..5).map(|j| w[(k * 5 + j) * 9 + 4] * xin[j]).sum::<f64>() };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let hv: Vec<f64> = h.flatten_all().unwrap().to_vec1().unwrap();
        let cv: Vec<f64> = c.flatten_all().unwrap().to_vec1().unwrap();
        for ch in 0..3 {
            let c_ref = sig(gate(ch)) * gate(9 + ch).tanh();
            let h_ref = sig(gate(6 + ch)) * c_ref.tanh();
            assert!((cv[ch] - c_ref).abs() < 1e-12);
            assert!((hv[ch] - h_ref).abs() < 1e-12);
        }
        assert_eq!(b[3..6], [1.0, 1.0, 1.0]);
    }
}
