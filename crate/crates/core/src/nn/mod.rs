//! Minimal dense network kernel: layers with analytic backward passes, Huber
//! loss, dropout, Adam, cosine learning-rate decay and a finite-difference
//! gradient checker.
//!
//! Everything works on `f64` row-major batches (`rows = samples`).

mod checkpoint;
mod dense;
mod gradcheck;
mod loss;
mod mlp;
mod optim;

pub use checkpoint::{Checkpoint, LayerDump, CHECKPOINT_FORMAT};
pub use dense::{Activation, DenseCache, DenseGrads, DenseLayer};
pub use gradcheck::{grad_check, numerical_gradient};
pub use loss::{dropout, huber_loss, mse_loss, HuberConfig};
pub use mlp::{Mlp, MlpCache};
pub use optim::{AdamState, CosineSchedule};

use ndarray::Array2;
use statrs::function::erf::erf;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// `x * Phi(x)` with the exact Gaussian CDF.
pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} contains non-finite values")))
    }
}
