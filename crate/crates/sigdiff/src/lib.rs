//! Conditional denoising diffusion through differentiable forward models.
//!
//! The library models an unobserved signal that is only ever measured through
//! a known, differentiable forward model: the denoiser estimates the signal,
//! the forward model maps it back to observation space, and the diffusion
//! noising/denoising loop runs entirely on observations. Sampling therefore
//! yields signal/observation pairs that are consistent by construction.
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `sigdiff` binary for configured experiment runs.

pub mod denoiser;
pub mod diffusion;
pub mod forward_models;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod measures;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod testbeds;

pub use tensor::{Gradients, Tape, Tensor, TensorError};
