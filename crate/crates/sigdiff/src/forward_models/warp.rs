//! Warping forward model: colors are splatted along a per-pixel motion field
//! scaled by phi, with a two-tap linear kernel and per-destination weight
//! normalization.
//!
//! The splat kernel is the simplest differentiable choice; footprint and
//! normalization are this artifact's stand-in where upstream formulations
//! leave them open. Destinations that receive no mass stay zero; the epsilon
//! guard enters the denominator only for those empty destinations, so the
//! zero-motion warp is an exact identity.

use super::{ForwardModel, Result};
use crate::tensor::Tensor;

/// Color plus per-pixel motion (pixels of displacement per unit phi).
#[derive(Debug, Clone)]
pub struct MotionSignal {
    pub color: Tensor,  // [W, 3]
    pub motion: Tensor, // [W, 1]
}

impl MotionSignal {
    /// Split a raw `[W, 4]` signal tensor into (color, motion) views.
    pub fn from_signal(signal: &Tensor) -> Result<Self> {
        let w = signal.shape()[0];
        Ok(MotionSignal {
            color: signal.slice(&[0, 0], &[w, 3])?,
            motion: signal.slice(&[0, 3], &[w, 1])?,
        })
    }

    /// Pack into the raw `[W, 4]` layout (host-side; drops any tape handle).
    pub fn to_signal(&self) -> Result<Tensor> {
        let w = self.color.shape()[0];
        let mut flat = Vec::with_capacity(w * 4);
        for u in 0..w {
            flat.extend_from_slice(&self.color.data()[u * 3..u * 3 + 3]);
            flat.push(self.motion.data()[u]);
        }
        Ok(Tensor::from_vec(vec![w, 4], flat)?)
    }
}

#[derive(Debug, Clone)]
pub struct WarpModel {
    width: usize,
    eps: f64,
}

impl WarpModel {
    pub fn new(width: usize) -> Self {
        WarpModel { width, eps: 1e-8 }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Splat each source pixel's color onto `u + phi * motion[u]` with a
    /// two-tap linear kernel; out-of-range taps are dropped.
    pub fn warp(&self, sig: &MotionSignal, phi: f64) -> Result<Tensor> {
        self.warp_parts(&sig.color, &sig.motion, phi)
    }

    fn warp_parts(&self, color: &Tensor, motion: &Tensor, phi: f64) -> Result<Tensor> {
        let w = self.width;
        let m = motion.data();
        let mut idx_lo = vec![0usize; w];
        let mut idx_hi = vec![0usize; w];
        let mut floors = vec![0.0f64; w];
        let mut mask_lo = vec![0.0f64; w];
        let mut mask_hi = vec![0.0f64; w];
        for u in 0..w {
            let x = u as f64 + phi * m[u];
            let f = x.floor();
            floors[u] = f;
            let lo = f as i64;
            let hi = lo + 1;
            if (0..w as i64).contains(&lo) {
                idx_lo[u] = lo as usize;
                mask_lo[u] = 1.0;
            }
            if (0..w as i64).contains(&hi) {
                idx_hi[u] = hi as usize;
                mask_hi[u] = 1.0;
            }
        }
        let u_t = Tensor::from_vec(vec![w, 1], (0..w).map(|u| u as f64).collect())?;
        let f_t = Tensor::from_vec(vec![w, 1], floors)?;
        // destination = u + phi * motion; tap weights are differentiable in the motion
        let x_t = motion.scale(phi)?.add(&u_t)?;
        let w_hi = x_t.sub(&f_t)?;
        let w_lo = Tensor::ones(&[w, 1]).sub(&w_hi)?;
        let w_lo = w_lo.mul(&Tensor::from_vec(vec![w, 1], mask_lo)?)?;
        let w_hi = w_hi.mul(&Tensor::from_vec(vec![w, 1], mask_hi)?)?;
        let ones13 = Tensor::ones(&[1, 3]);
        let num = Tensor::zeros(&[w, 3])
            .scatter_add(&idx_lo, &color.mul(&w_lo.matmul(&ones13)?)?)?
            .scatter_add(&idx_hi, &color.mul(&w_hi.matmul(&ones13)?)?)?;
        let den = Tensor::zeros(&[w, 1])
            .scatter_add(&idx_lo, &w_lo)?
            .scatter_add(&idx_hi, &w_hi)?;
        // epsilon only where nothing splatted, keeping hit pixels exact
        let guard: Vec<f64> = den
            .data()
            .iter()
            .map(|&v| if v < self.eps { self.eps } else { 0.0 })
            .collect();
        let den_safe = den.add(&Tensor::from_vec(vec![w, 1], guard)?)?;
        Ok(num.div(&den_safe.matmul(&ones13)?)?)
    }
}

impl ForwardModel for WarpModel {
    /// phi scales the magnitude of motion; 0 observes the colors directly.
    type Params = f64;

    fn signal_shape(&self) -> Vec<usize> {
        vec![self.width, 4]
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![self.width, 3]
    }

    fn apply(&self, signal: &Tensor, phi: &f64) -> Result<Tensor> {
        self.check_signal(signal)?;
        let w = self.width;
        let color = signal.slice(&[0, 0], &[w, 3])?;
        let motion = signal.slice(&[0, 3], &[w, 1])?;
        self.warp_parts(&color, &motion, *phi)
    }

    fn encode_params(&self, phi: &f64) -> Vec<f64> {
        vec![*phi]
    }

    fn param_encoding_len(&self) -> usize {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;

    fn sig(color: Vec<f64>, motion: Vec<f64>) -> MotionSignal {
        let w = motion.len();
        MotionSignal {
            color: Tensor::from_vec(vec![w, 3], color).unwrap(),
            motion: Tensor::from_vec(vec![w, 1], motion).unwrap(),
        }
    }

    #[test]
    fn zero_motion_is_exact_identity() {
        let mut rng = RngKey::new(1).rng();
        let color = Tensor::randn(&[8, 3], &mut rng);
        let s = MotionSignal {
            color: color.clone(),
            motion: Tensor::zeros(&[8, 1]),
        };
        let model = WarpModel::new(8);
        for phi in [0.0, 1.0, 2.5, -3.0] {
            let out = model.warp(&s, phi).unwrap();
            assert!(out.bit_eq(&color), "phi={phi}");
        }
    }

    #[test]
    fn unit_motion_shifts_by_one_pixel() {
        let w = 8;
        let mut color = vec![0.0; w * 3];
        color[3 * 3] = 0.9; // pixel 3, red
        let s = sig(color, vec![1.0; w]);
        let out = WarpModel::new(w).warp(&s, 1.0).unwrap();
        assert_eq!(out.data()[4 * 3], 0.9);
        // source pixel 7 splats out of range; destination 0 is unhit and zero
        assert_eq!(out.data()[0], 0.0);
    }

    #[test]
    fn half_motion_splits_between_two_pixels() {
        let w = 8;
        let mut color = vec![0.0; w * 3];
        color[3 * 3 + 1] = 0.8; // pixel 3, green
        let s = sig(color, vec![0.5; w]);
        let out = WarpModel::new(w).warp(&s, 1.0).unwrap();
        // interior destinations accumulate weight 0.5 + 0.5 = 1
        assert!((out.data()[3 * 3 + 1] - 0.4).abs() < 1e-12);
        assert!((out.data()[4 * 3 + 1] - 0.4).abs() < 1e-12);
    }

    /// Dense-matrix oracle: build the full W x W splat matrix by hand and
    /// normalize with the same empty-destination epsilon rule.
    fn dense_warp_oracle(color: &[f64], motion: &[f64], phi: f64, w: usize) -> Vec<f64> {
        let eps = 1e-8;
        let mut mat = vec![0.0f64; w * w]; // [dest, src]
        for u in 0..w {
            let x = u as f64 + phi * motion[u];
            let f = x.floor();
            let (lo, hi) = (f as i64, f as i64 + 1);
            let w_hi = x - f;
            if (0..w as i64).contains(&lo) {
                mat[lo as usize * w + u] += 1.0 - w_hi;
            }
            if (0..w as i64).contains(&hi) {
                mat[hi as usize * w + u] += w_hi;
            }
        }
        let mut out = vec![0.0f64; w * 3];
        for d in 0..w {
            let den: f64 = (0..w).map(|u| mat[d * w + u]).sum();
            let den_safe = if den < eps { den + eps } else { den };
            for ch in 0..3 {
                let num: f64 = (0..w).map(|u| mat[d * w + u] * color[u * 3 + ch]).sum();
                out[d * 3 + ch] = num / den_safe;
            }
        }
        out
    }

    #[test]
    fn matches_dense_warp_oracle() {
        let w = 10;
        let mut rng = RngKey::new(7).rng();
        let color = Tensor::randn(&[w, 3], &mut rng);
        let motion = Tensor::randn(&[w, 1], &mut rng).scale(1.7).unwrap();
        let s = MotionSignal {
            color: color.clone(),
            motion: motion.clone(),
        };
        for phi in [0.3, 1.0, -0.8] {
            let got = WarpModel::new(w).warp(&s, phi).unwrap();
            let want = dense_warp_oracle(color.data(), motion.data(), phi, w);
            for (g, o) in got.data().iter().zip(want.iter()) {
                assert!((g - o).abs() < 1e-12, "phi={phi}: {g} vs {o}");
            }
        }
    }

    #[test]
    fn splat_mass_is_conserved_for_interior_destinations() {
        // Before clipping, the two taps of each source pixel sum to weight 1.
        let w = 16;
        let mut rng = RngKey::new(9).rng();
        let motion = Tensor::randn(&[w, 1], &mut rng);
        for u in 0..w {
            let x = u as f64 + motion.data()[u];
            let f = x.floor();
            let w_hi = x - f;
            let w_lo = 1.0 - w_hi;
            assert!((w_lo + w_hi - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn signal_layout_roundtrip_and_apply() {
        let w = 6;
        let mut rng = RngKey::new(11).rng();
        let s = MotionSignal {
            color: Tensor::randn(&[w, 3], &mut rng),
            motion: Tensor::randn(&[w, 1], &mut rng),
        };
        let packed = s.to_signal().unwrap();
        let model = WarpModel::new(w);
        let via_signal = model.apply(&packed, &0.7).unwrap();
        let via_parts = model.warp(&s, 0.7).unwrap();
        assert!(via_signal.bit_eq(&via_parts));
    }
}
