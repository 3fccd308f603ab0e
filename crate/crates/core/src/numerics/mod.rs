//! Dense `f64` arithmetic, reverse-mode differentiation and optimization.

pub mod adam;
pub mod gradcheck;
pub mod linalg;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{clip_grad_norm, AdamState, Decay};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use params::{normal_init, ModelParams};
pub use tape::{AttnMask, Gradients, ParamVars, Tape, Var, HALF_LN_2PI, HALF_LN_2PI_E};
pub use tensor::Tensor;

use crate::error::Result;

/// Scalar diagonal-Gaussian negative log-likelihood (no tape).
pub fn gaussian_nll(mean: &Tensor, log_std: &Tensor, x: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let (m, l, t) = (tape.tensor(mean), tape.tensor(log_std), tape.tensor(x));
    let v = tape.gaussian_nll(m, l, t)?;
    Ok(tape.scalar(v))
}

/// Diagonal-Gaussian entropy `Σ_i log_std_i + ½ln(2πe)`.
pub fn gaussian_entropy(log_std: &Tensor) -> f64 {
    log_std.data().iter().map(|l| l + HALF_LN_2PI_E).sum()
}
