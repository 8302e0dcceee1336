//! Differentiable forward models: deterministic maps from an unobserved
//! signal and parameters phi to a partial observation.
//!
//! Three toy instantiations live here (volume rendering, point-splat warping,
//! a frozen generator sliced into patches) plus the linear maps used by the
//! analytic oracles and the measure suite. All of them are built from tensor
//! primitives, so gradients w.r.t. the signal come from the tape for free.

mod linear;
mod render;
mod synthesize;
mod warp;

pub use linear::{linear_map, LinearFamilyModel};
pub use render::{CameraPose, RenderModel, ToyScene};
pub use synthesize::{GeneratorModel, LatentSignal, PatchCoords};
pub use warp::{MotionSignal, WarpModel};

use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FmError {
    #[error("signal shape {got:?} does not match model signal shape {expected:?}")]
    SignalShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("patch at ({row}, {col}) with extent {h}x{w} exceeds image {img_h}x{img_w}")]
    PatchOutOfBounds {
        row: usize,
        col: usize,
        h: usize,
        w: usize,
        img_h: usize,
        img_w: usize,
    },
    #[error("{0}: {1}")]
    Invalid(&'static str, String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, FmError>;

/// A known, deterministic, differentiable map `(signal, phi) -> observation`.
///
/// `apply` must be pure: identical inputs give identical outputs, and the
/// result participates in the gradient tape whenever the signal does.
pub trait ForwardModel {
    type Params: Clone + std::fmt::Debug;

    /// Shape of the raw (pre-decoding) signal tensor.
    fn signal_shape(&self) -> Vec<usize>;

    /// Shape of one observation.
    fn observation_shape(&self) -> Vec<usize>;

    fn apply(&self, signal: &Tensor, phi: &Self::Params) -> Result<Tensor>;

    /// Fixed-width real encoding of phi for conditioning networks.
    fn encode_params(&self, phi: &Self::Params) -> Vec<f64>;

    fn param_encoding_len(&self) -> usize;

    fn check_signal(&self, signal: &Tensor) -> Result<()> {
        if signal.shape() != self.signal_shape().as_slice() {
            return Err(FmError::SignalShape {
                expected: self.signal_shape(),
                got: signal.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Stable inverse of `softplus`: returns x with `ln(1 + e^x) = y`, y > 0.
pub fn inv_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "inv_softplus needs y > 0, got {y}");
    if y > 30.0 {
        // ln(e^y - 1) = y + ln(1 - e^-y)
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Inverse of the sigmoid; p strictly inside (0, 1).
pub fn logit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "logit needs p in (0,1), got {p}");
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inv_softplus_roundtrips() {
        for &y in &[1e-6, 0.5, 1.0, 10.0, 25.0, 40.0, 200.0] {
            let x = inv_softplus(y);
            let back = if x > 30.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
            assert!((back - y).abs() < 1e-9 * y.max(1.0), "y={y}");
        }
    }

    #[test]
    fn logit_roundtrips() {
        for &p in &[1e-6, 0.25, 0.5, 0.9, 1.0 - 1e-6] {
            let x = logit(p);
            let back = 1.0 / (1.0 + (-x).exp());
            assert!((back - p).abs() < 1e-12);
        }
    }
}
