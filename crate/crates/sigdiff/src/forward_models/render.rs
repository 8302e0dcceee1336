//! Volume-rendering forward model over a 2D grid scene observed by a 1D
//! orthographic camera.
//!
//! Per-pixel color follows the standard transmittance compositing rule
//! `sum_i T_i (1 - exp(-sigma_i delta_i)) c_i` with
//! `T_i = exp(-sum_{j<i} sigma_j delta_j)` over equally spaced samples along
//! each ray, against a black background. Density is stored through softplus
//! and color through sigmoid, so raw scene tensors are unconstrained while
//! decoded scenes always satisfy the invariants.

use super::{FmError, ForwardModel, Result};
use crate::tensor::Tensor;

/// Scene grid with raw per-cell storage: channel 0 is density (softplus
/// storage), channels 1..4 are color (sigmoid storage).
#[derive(Debug, Clone)]
pub struct ToyScene {
    grid: Tensor, // [H, W, 4]
}

impl ToyScene {
    pub fn new(grid: Tensor) -> Result<Self> {
        if grid.shape().len() != 3 || grid.shape()[2] != 4 {
            return Err(FmError::Invalid(
                "toy_scene",
                format!("expected [H, W, 4] grid, got {:?}", grid.shape()),
            ));
        }
        Ok(ToyScene { grid })
    }

    /// Build raw storage from decoded density (> 0) and colors (in (0, 1)).
    pub fn from_decoded(h: usize, w: usize, sigma: &[f64], rgb: &[f64]) -> Result<Self> {
        if sigma.len() != h * w || rgb.len() != h * w * 3 {
            return Err(FmError::Invalid(
                "toy_scene",
                "decoded arrays do not match grid extent".into(),
            ));
        }
        let mut flat = Vec::with_capacity(h * w * 4);
        for c in 0..h * w {
            flat.push(super::inv_softplus(sigma[c]));
            for ch in 0..3 {
                flat.push(super::logit(rgb[c * 3 + ch]));
            }
        }
        Ok(ToyScene {
            grid: Tensor::from_vec(vec![h, w, 4], flat)?,
        })
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn decoded_density(&self) -> Result<Tensor> {
        let (h, w) = (self.grid.shape()[0], self.grid.shape()[1]);
        Ok(self
            .grid
            .slice(&[0, 0, 0], &[h, w, 1])?
            .reshape(&[h, w])?
            .softplus()?)
    }

    pub fn decoded_rgb(&self) -> Result<Tensor> {
        let (h, w) = (self.grid.shape()[0], self.grid.shape()[1]);
        Ok(self.grid.slice(&[0, 0, 1], &[h, w, 3])?.sigmoid()?)
    }
}

/// 1D orthographic camera over the unit-square scene: view direction at
/// `angle` radians, image plane shifted laterally by `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub angle: f64,
    pub offset: f64,
}

impl CameraPose {
    pub fn new(angle: f64, offset: f64) -> Self {
        CameraPose { angle, offset }
    }
}

#[derive(Debug, Clone)]
pub struct RenderModel {
    grid_h: usize,
    grid_w: usize,
    image_w: usize,
    n_samples: usize,
    feature_channels: usize,
    span: f64,
}

/// Precomputed, pose-dependent constants: bilinear corner indices and
/// weights per (pixel, sample), and per-pixel segment lengths.
struct RayPlan {
    idx: [Vec<usize>; 4],
    wgt: [Vec<f64>; 4],
    delta: Vec<f64>,
}

impl RenderModel {
    pub fn new(grid_h: usize, grid_w: usize, image_w: usize, n_samples: usize) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || image_w == 0 || n_samples == 0 {
            return Err(FmError::Invalid("render", "zero extent".into()));
        }
        Ok(RenderModel {
            grid_h,
            grid_w,
            image_w,
            n_samples,
            feature_channels: 0,
            span: 1.0,
        })
    }

    /// Enable K extra per-cell feature channels, composited with the same
    /// weights as color by [`RenderModel::render_with_features`].
    pub fn with_feature_channels(mut self, k: usize) -> Self {
        self.feature_channels = k;
        self
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn image_width(&self) -> usize {
        self.image_w
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    fn plan_rays(&self, pose: &CameraPose) -> RayPlan {
        let (h, w) = (self.grid_h, self.grid_w);
        let n = self.n_samples;
        let wi = self.image_w;
        let dir = (pose.angle.cos(), pose.angle.sin());
        let lat = (-pose.angle.sin(), pose.angle.cos());
        let mut idx = [
            Vec::with_capacity(wi * n),
            Vec::with_capacity(wi * n),
            Vec::with_capacity(wi * n),
            Vec::with_capacity(wi * n),
        ];
        let mut wgt = [
            Vec::with_capacity(wi * n),
            Vec::with_capacity(wi * n),
            Vec::with_capacity(wi * n),
            Vec::with_capacity(wi * n),
        ];
        let mut delta = Vec::with_capacity(wi);
        for i in 0..wi {
            let u = ((i as f64 + 0.5) / wi as f64 - 0.5) * self.span + pose.offset;
            let origin = (
                0.5 + u * lat.0 - 2.0 * dir.0,
                0.5 + u * lat.1 - 2.0 * dir.1,
            );
            let hit = slab_intersect(origin, dir);
            match hit {
                Some((t0, t1)) if t1 > t0 => {
                    let d = (t1 - t0) / n as f64;
                    delta.push(d);
                    for k in 0..n {
                        let t = t0 + (k as f64 + 0.5) * d;
                        let x = origin.0 + t * dir.0;
                        let y = origin.1 + t * dir.1;
                        let (cells, weights) = bilinear(x, y, h, w);
                        for c in 0..4 {
                            idx[c].push(cells[c]);
                            wgt[c].push(weights[c]);
                        }
                    }
                }
                _ => {
                    // rays that miss the box contribute nothing: the image is black there
                    delta.push(0.0);
                    for _ in 0..n {
                        for c in 0..4 {
                            idx[c].push(0);
                            wgt[c].push(0.0);
                        }
                    }
                }
            }
        }
        RayPlan { idx, wgt, delta }
    }

    fn composite(
        &self,
        plan: &RayPlan,
        values: &Tensor, // [H*W, C] decoded per-cell values
        weights: &Tensor, // [P, 1] compositing weights (transmittance * alpha)
        channels: usize,
    ) -> Result<Tensor> {
        let p = self.image_w * self.n_samples;
        let mut samp: Option<Tensor> = None;
        for c in 0..4 {
            // replicate the scalar interpolation weight across channels
            let mut wc = Vec::with_capacity(p * channels);
            for &v in &plan.wgt[c] {
                for _ in 0..channels {
                    wc.push(v);
                }
            }
            let term = values
                .gather(&plan.idx[c])?
                .mul(&Tensor::from_vec(vec![p, channels], wc)?)?;
            samp = Some(match samp {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
        let samp = samp.unwrap();
        let wrep = weights.matmul(&Tensor::ones(&[1, channels]))?;
        let weighted = wrep.mul(&samp)?;
        // per-pixel sum over the samples along the ray
        let mut sel = vec![0.0; self.image_w * p];
        for i in 0..self.image_w {
            for k in 0..self.n_samples {
                sel[i * p + i * self.n_samples + k] = 1.0;
            }
        }
        let sel = Tensor::from_vec(vec![self.image_w, p], sel)?;
        Ok(sel.matmul(&weighted)?)
    }

    fn render_parts(
        &self,
        scene: &Tensor,
        features: Option<&Tensor>,
        pose: &CameraPose,
    ) -> Result<(Tensor, Option<Tensor>)> {
        self.check_signal(scene)?;
        let (h, w, n, wi) = (self.grid_h, self.grid_w, self.n_samples, self.image_w);
        let p = wi * n;
        let plan = self.plan_rays(pose);

        let sigma = scene
            .slice(&[0, 0, 0], &[h, w, 1])?
            .reshape(&[h * w, 1])?
            .softplus()?;
        let rgb = scene
            .slice(&[0, 0, 1], &[h, w, 3])?
            .reshape(&[h * w, 3])?
            .sigmoid()?;

        // interpolated density per (pixel, sample), then optical depth
        let mut sig_samp: Option<Tensor> = None;
        for c in 0..4 {
            let term = sigma
                .gather(&plan.idx[c])?
                .mul(&Tensor::from_vec(vec![p, 1], plan.wgt[c].clone())?)?;
            sig_samp = Some(match sig_samp {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
        let sig_samp = sig_samp.unwrap().reshape(&[wi, n])?;
        let mut delta_rep = Vec::with_capacity(p);
        for &d in &plan.delta {
            for _ in 0..n {
                delta_rep.push(d);
            }
        }
        let tau = sig_samp.mul(&Tensor::from_vec(vec![wi, n], delta_rep)?)?;

        // T_i = exp(-prefix sum of tau), alpha_i = 1 - exp(-tau_i)
        let mut strict = vec![0.0; n * n];
        for row in 0..n {
            for col in row + 1..n {
                strict[row * n + col] = 1.0;
            }
        }
        let prefix = tau.matmul(&Tensor::from_vec(vec![n, n], strict)?)?;
        let trans = prefix.neg()?.exp()?;
        let alpha = Tensor::ones(&[wi, n]).sub(&tau.neg()?.exp()?)?;
        let weights = trans.mul(&alpha)?.reshape(&[p, 1])?;

        let image = self.composite(&plan, &rgb, &weights, 3)?;
        let feat_image = match features {
            Some(f) => {
                let k = self.feature_channels;
                if f.shape() != [h, w, k] {
                    return Err(FmError::Invalid(
                        "render",
                        format!("feature grid {:?}, expected [{h}, {w}, {k}]", f.shape()),
                    ));
                }
                let f_flat = f.reshape(&[h * w, k])?;
                Some(self.composite(&plan, &f_flat, &weights, k)?)
            }
            None => None,
        };
        Ok((image, feat_image))
    }

    /// Render color and a K-channel feature image composited with identical
    /// weights. The color path is bit-identical to [`ForwardModel::apply`].
    pub fn render_with_features(
        &self,
        scene: &Tensor,
        features: &Tensor,
        pose: &CameraPose,
    ) -> Result<(Tensor, Tensor)> {
        let (img, feat) = self.render_parts(scene, Some(features), pose)?;
        Ok((img, feat.expect("features requested")))
    }
}

impl ForwardModel for RenderModel {
    type Params = CameraPose;

    fn signal_shape(&self) -> Vec<usize> {
        vec![self.grid_h, self.grid_w, 4]
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![self.image_w, 3]
    }

    fn apply(&self, signal: &Tensor, phi: &CameraPose) -> Result<Tensor> {
        Ok(self.render_parts(signal, None, phi)?.0)
    }

    fn encode_params(&self, phi: &CameraPose) -> Vec<f64> {
        vec![phi.angle.sin(), phi.angle.cos(), phi.offset]
    }

    fn param_encoding_len(&self) -> usize {
        3
    }
}

/// Intersect `origin + t * dir` with the unit square; returns (t_near, t_far).
fn slab_intersect(origin: (f64, f64), dir: (f64, f64)) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d) in [(origin.0, dir.0), (origin.1, dir.1)] {
        if d.abs() < 1e-12 {
            if !(0.0..=1.0).contains(&o) {
                return None;
            }
        } else {
            let (a, b) = ((0.0 - o) / d, (1.0 - o) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t1 > t0).then_some((t0, t1))
}

/// Bilinear interpolation over cell centers with border clamping: returns the
/// four flat cell indices and their weights for scene point (x, y).
fn bilinear(x: f64, y: f64, h: usize, w: usize) -> ([usize; 4], [f64; 4]) {
    let split = |coord: f64, extent: usize| -> (usize, usize, f64) {
        if extent == 1 {
            return (0, 0, 0.0);
        }
        let g = coord * extent as f64 - 0.5;
        let base = g.floor().clamp(0.0, (extent - 2) as f64);
        let frac = (g - base).clamp(0.0, 1.0);
        (base as usize, base as usize + 1, frac)
    };
    let (j0, j1, fx) = split(x, w);
    let (i0, i1, fy) = split(y, h);
    (
        [i0 * w + j0, i0 * w + j1, i1 * w + j0, i1 * w + j1],
        [
            (1.0 - fy) * (1.0 - fx),
            (1.0 - fy) * fx,
            fy * (1.0 - fx),
            fy * fx,
        ],
    )
}
