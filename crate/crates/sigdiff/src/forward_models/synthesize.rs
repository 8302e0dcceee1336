//! Generator-slice forward model: a frozen, randomly initialized two-layer
//! network maps a latent vector to a small image, and the observation is a
//! patch of that image selected by the forward-model parameters.

use super::{FmError, ForwardModel, Result};
use crate::rng::RngKey;
use crate::tensor::Tensor;

/// The unobserved signal: a latent vector in the generator's input space.
#[derive(Debug, Clone)]
pub struct LatentSignal {
    pub w: Tensor,
}

/// Top-left corner of a patch; the patch extent is fixed by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchCoords {
    pub row: usize,
    pub col: usize,
}

/// Frozen two-layer generator, seeded once and immutable for the lifetime of
/// an experiment.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    latent_dim: usize,
    image_h: usize,
    image_w: usize,
    patch_h: usize,
    patch_w: usize,
}

impl GeneratorModel {
    pub fn seeded(
        key: RngKey,
        latent_dim: usize,
        hidden: usize,
        image_h: usize,
        image_w: usize,
        patch_h: usize,
        patch_w: usize,
    ) -> Result<Self> {
        if patch_h > image_h || patch_w > image_w {
            return Err(FmError::Invalid(
                "generator",
                format!("patch {patch_h}x{patch_w} larger than image {image_h}x{image_w}"),
            ));
        }
        let out_dim = image_h * image_w * 3;
        let mut rng = key.rng();
        let scale1 = 1.0 / (latent_dim as f64).sqrt();
        let scale2 = 1.0 / (hidden as f64).sqrt();
        let scaled = |t: Tensor, s: f64| t.scale(s).map_err(FmError::from);
        Ok(GeneratorModel {
            w1: scaled(Tensor::randn(&[hidden, latent_dim], &mut rng), scale1)?,
            b1: Tensor::zeros(&[hidden]),
            w2: scaled(Tensor::randn(&[out_dim, hidden], &mut rng), scale2)?,
            b2: Tensor::zeros(&[out_dim]),
            latent_dim,
            image_h,
            image_w,
            patch_h,
            patch_w,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.image_h, self.image_w)
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        (self.patch_h, self.patch_w)
    }

    /// Full generated image, shape `[H, W, 3]`.
    pub fn full_image(&self, w: &Tensor) -> Result<Tensor> {
        self.check_signal(w)?;
        let hidden = self.w1.matmul(w)?.add(&self.b1)?.relu()?;
        let flat = self.w2.matmul(&hidden)?.add(&self.b2)?;
        Ok(flat.reshape(&[self.image_h, self.image_w, 3])?)
    }
}

impl ForwardModel for GeneratorModel {
    type Params = PatchCoords;

    fn signal_shape(&self) -> Vec<usize> {
        vec![self.latent_dim]
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![self.patch_h, self.patch_w, 3]
    }

    fn apply(&self, signal: &Tensor, phi: &PatchCoords) -> Result<Tensor> {
        if phi.row + self.patch_h > self.image_h || phi.col + self.patch_w > self.image_w {
            return Err(FmError::PatchOutOfBounds {
                row: phi.row,
                col: phi.col,
                h: self.patch_h,
                w: self.patch_w,
                img_h: self.image_h,
                img_w: self.image_w,
            });
        }
        let full = self.full_image(signal)?;
        Ok(full.slice(&[phi.row, phi.col, 0], &[self.patch_h, self.patch_w, 3])?)
    }

    /// Patch corner normalized to [0, 1].
    fn encode_params(&self, phi: &PatchCoords) -> Vec<f64> {
        vec![
            phi.row as f64 / self.image_h as f64,
            phi.col as f64 / self.image_w as f64,
        ]
    }

    fn param_encoding_len(&self) -> usize {
        2
    }
}
