//! Minimal dense-tensor autodiff shared by the classifier and the diffusion
//! denoiser.

mod mat;
mod params;
mod tape;

pub use mat::{matmul, matmul_at, matmul_bt, Mat};
pub(crate) use mat::dot;
pub use params::{Param, ParamId, ParamStore};
pub(crate) use tape::softmax_in_place;
pub use tape::{ConvGeom, Grads, Tape, Var};

/// Sinusoidal embedding of a scalar position into `dim` features.
pub fn sinusoidal(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}
