//! Small neural-network toolkit on top of candle tensors.

mod adam;
mod clstm;
mod layers;
mod params;
mod spectral;

pub use adam::Adam;
pub use clstm::ConvLstmCell;
pub use layers::{
    ids_tensor, log_softmax, scalar_f64, sigmoid, softplus, BatchNorm2d, ConditionalBatchNorm2d, Conv2d, Embedding,
    Linear, Mode, BN_EPS, BN_MOMENTUM,
};
pub use params::{ParamStore, Scope};
pub use spectral::{top_singular_value, SnConv2d, SnLinear, SpectralNorm, WARMUP_ITERATIONS};
