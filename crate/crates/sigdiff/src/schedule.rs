//! Variance schedules for the observation-space noising process, plus the
//! noise-matching constants used when re-noising a clean forward-model output
//! during the reverse process.
//!
//! With `alpha_bar[t]` the cumulative product of `1 - beta`, the forward
//! marginal at step `t` is `sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) e`.
//! Re-noising a clean estimate with `C[t] = sqrt(alpha_bar[t])` and variance
//! `beta_hat[t] = 1 - alpha_bar[t]` reproduces exactly that marginal, which is
//! the property the reverse step relies on.

use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("schedule needs at least one step")]
    Empty,
    #[error("beta range ({0}, {1}) must satisfy 0 < start <= end < 1")]
    BetaRange(f64, f64),
    #[error("step {t} outside valid range {lo}..={hi}")]
    StepOutOfRange { t: usize, lo: usize, hi: usize },
    #[error("noise shape {noise:?} does not match input shape {input:?}")]
    NoiseShape { noise: Vec<usize>, input: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ScheduleError>;

pub const DEFAULT_T: usize = 64;
pub const DEFAULT_BETA_START: f64 = 0.01;
pub const DEFAULT_BETA_END: f64 = 0.15;

/// Per-step noise levels and the derived re-noising constants.
///
/// Arrays are indexed so that `beta(t)` covers `t in 1..=T` while
/// `alpha_bar`, `c` and `beta_hat` cover `t in 0..=T` with
/// `alpha_bar(0) = 1`, `c(0) = 1`, `beta_hat(0) = 0`.
#[derive(Debug, Clone)]
pub struct VarianceSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    c: Vec<f64>,
    beta_hat: Vec<f64>,
}

impl VarianceSchedule {
    /// Linear interpolation of beta from `beta_start` to `beta_end` inclusive.
    /// A single-step schedule uses `beta_start`.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(ScheduleError::BetaRange(beta_start, beta_end));
        }
        if t_steps == 0 {
            return Err(ScheduleError::Empty);
        }
        let beta = (0..t_steps)
            .map(|i| {
                if t_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(ScheduleError::Empty);
        }
        if let Some(&b) = beta.iter().find(|b| !(0.0 < **b && **b < 1.0)) {
            return Err(ScheduleError::BetaRange(b, b));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        let c: Vec<f64> = alpha_bar.iter().map(|a| a.sqrt()).collect();
        let beta_hat: Vec<f64> = alpha_bar.iter().map(|a| 1.0 - a).collect();
        Ok(VarianceSchedule {
            beta,
            alpha_bar,
            c,
            beta_hat,
        })
    }

    /// Number of diffusion steps T.
    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn c(&self, t: usize) -> f64 {
        self.c[t]
    }

    pub fn beta_hat(&self, t: usize) -> f64 {
        self.beta_hat[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    fn check_step(&self, t: usize, lo: usize, hi: usize) -> Result<()> {
        if t < lo || t > hi {
            return Err(ScheduleError::StepOutOfRange { t, lo, hi });
        }
        Ok(())
    }
}

fn check_noise_shape(x: &Tensor, noise: &Tensor) -> Result<()> {
    if x.shape() != noise.shape() {
        return Err(ScheduleError::NoiseShape {
            noise: noise.shape().to_vec(),
            input: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// Forward-process marginal: `sqrt(ab[t]) x0 + sqrt(1 - ab[t]) noise`, t in 1..=T.
pub fn q_sample(x0: &Tensor, t: usize, noise: &Tensor, sched: &VarianceSchedule) -> Result<Tensor> {
    sched.check_step(t, 1, sched.t_max())?;
    check_noise_shape(x0, noise)?;
    let signal = x0.scale(sched.alpha_bar(t).sqrt())?;
    let noisy = noise.scale((1.0 - sched.alpha_bar(t)).sqrt())?;
    Ok(signal.add(&noisy)?)
}

/// Re-noise a clean estimate to level t: `C[t] o_hat + sqrt(beta_hat[t]) noise`,
/// t in 0..=T-1. At t = 0 this returns `o_hat` unchanged.
pub fn renoise(o_hat: &Tensor, t: usize, noise: &Tensor, sched: &VarianceSchedule) -> Result<Tensor> {
    sched.check_step(t, 0, sched.t_max() - 1)?;
    check_noise_shape(o_hat, noise)?;
    if t == 0 {
        // beta_hat[0] = 0 and C[0] = 1: the final step is noiseless and exact.
        return Ok(o_hat.clone());
    }
    let signal = o_hat.scale(sched.c(t))?;
    let noisy = noise.scale(sched.beta_hat(t).sqrt())?;
    Ok(signal.add(&noisy)?)
}

/// Alternative reverse step: the standard diffusion posterior
/// `q(x_{t-1} | x_t, x0_hat)` evaluated at the clean estimate. `t` is the
/// current step in 1..=T; the result is the observation at `t - 1`.
pub fn ddpm_posterior_step(
    o_hat: &Tensor,
    o_t: &Tensor,
    t: usize,
    noise: &Tensor,
    sched: &VarianceSchedule,
) -> Result<Tensor> {
    sched.check_step(t, 1, sched.t_max())?;
    check_noise_shape(o_hat, noise)?;
    check_noise_shape(o_hat, o_t)?;
    let beta_t = sched.beta(t);
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let alpha_t = 1.0 - beta_t;
    let coef_clean = ab_prev.sqrt() * beta_t / (1.0 - ab_t);
    let coef_noisy = alpha_t.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t;
    let mean = o_hat.scale(coef_clean)?.add(&o_t.scale(coef_noisy)?)?;
    if var == 0.0 {
        return Ok(mean);
    }
    Ok(mean.add(&noise.scale(var.sqrt())?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;

    #[test]
    fn single_step_schedule() {
        let s = VarianceSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar, vec![1.0, 0.5]);
        assert!((s.c(1) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.beta_hat, vec![0.0, 0.5]);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(
            VarianceSchedule::linear(0, 0.1, 0.2),
            Err(ScheduleError::Empty)
        ));
    }

    #[test]
    fn invalid_beta_rejected() {
        assert!(VarianceSchedule::linear(4, 0.0, 0.2).is_err());
        assert!(VarianceSchedule::linear(4, 0.3, 0.2).is_err());
        assert!(VarianceSchedule::linear(4, 0.1, 1.0).is_err());
    }

    #[test]
    fn noise_matching_identity_holds() {
        // C[t]^2 + beta_hat[t] == 1 to 1e-12, and alpha_bar strictly decreases.
        let s = VarianceSchedule::linear(100, 1e-4, 0.2).unwrap();
        for t in 0..=s.t_max() {
            assert!((s.c(t).powi(2) + s.beta_hat(t) - 1.0).abs() < 1e-12);
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) <= 1.0);
            if t > 0 {
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
        assert_eq!(s.beta_hat(0), 0.0);
        assert_eq!(s.c(0), 1.0);
    }

    #[test]
    fn alpha_bar_matches_independent_product_order() {
        // Same product accumulated in reverse order agrees to 1e-10.
        let s = VarianceSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let mut rev = 1.0f64;
        for b in s.betas().iter().rev() {
            rev *= 1.0 - b;
        }
        assert!((s.alpha_bar(1000) - rev).abs() < 1e-10);
    }

    #[test]
    fn q_sample_zero_noise_limit() {
        // beta -> 0 makes alpha_bar -> 1 and the output collapse to x0.
        let s = VarianceSchedule::linear(1, 1e-12, 1e-12).unwrap();
        let x0 = Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let noise = Tensor::from_vec(vec![3], vec![3.0, 3.0, 3.0]).unwrap();
        let out = q_sample(&x0, 1, &noise, &s).unwrap();
        for (o, x) in out.data().iter().zip(x0.data()) {
            assert!((o - x).abs() < 1e-5);
        }
    }

    #[test]
    fn q_sample_pure_noise_branch() {
        let s = VarianceSchedule::linear(8, 0.05, 0.3).unwrap();
        let x0 = Tensor::zeros(&[4]);
        let mut rng = RngKey::new(3).rng();
        let noise = Tensor::randn(&[4], &mut rng);
        let out = q_sample(&x0, 5, &noise, &s).unwrap();
        let scale = (1.0 - s.alpha_bar(5)).sqrt();
        for (o, n) in out.data().iter().zip(noise.data()) {
            assert_eq!(*o, scale * n);
        }
    }

    #[test]
    fn q_sample_step_range_enforced() {
        let s = VarianceSchedule::linear(8, 0.05, 0.3).unwrap();
        let x = Tensor::zeros(&[2]);
        assert!(q_sample(&x, 0, &x, &s).is_err());
        assert!(q_sample(&x, 9, &x, &s).is_err());
        assert!(q_sample(&x, 8, &x, &s).is_ok());
    }

    #[test]
    fn q_sample_rejects_noise_shape_mismatch() {
        let s = VarianceSchedule::linear(8, 0.05, 0.3).unwrap();
        let x = Tensor::zeros(&[2]);
        let n = Tensor::zeros(&[3]);
        assert!(matches!(
            q_sample(&x, 1, &n, &s),
            Err(ScheduleError::NoiseShape { .. })
        ));
    }

    #[test]
    fn renoise_final_step_is_exact() {
        let s = VarianceSchedule::linear(8, 0.05, 0.3).unwrap();
        let mut rng = RngKey::new(4).rng();
        let o_hat = Tensor::randn(&[5], &mut rng);
        let noise = Tensor::randn(&[5], &mut rng);
        let out = renoise(&o_hat, 0, &noise, &s).unwrap();
        assert!(out.bit_eq(&o_hat));
    }

    #[test]
    fn renoise_zero_estimate() {
        let s = VarianceSchedule::linear(8, 0.05, 0.3).unwrap();
        let o_hat = Tensor::zeros(&[3]);
        let mut rng = RngKey::new(5).rng();
        let noise = Tensor::randn(&[3], &mut rng);
        let out = renoise(&o_hat, 4, &noise, &s).unwrap();
        let scale = s.beta_hat(4).sqrt();
        for (o, n) in out.data().iter().zip(noise.data()) {
            assert_eq!(*o, scale * n);
        }
    }

    #[test]
    fn renoise_step_range_enforced() {
        let s = VarianceSchedule::linear(8, 0.05, 0.3).unwrap();
        let x = Tensor::zeros(&[2]);
        assert!(renoise(&x, 8, &x, &s).is_err());
        assert!(renoise(&x, 7, &x, &s).is_ok());
    }

    #[test]
    fn ddpm_posterior_final_step_returns_estimate() {
        // At t=1 the posterior variance vanishes and the mean equals o_hat.
        let s = VarianceSchedule::linear(8, 0.05, 0.3).unwrap();
        let mut rng = RngKey::new(6).rng();
        let o_hat = Tensor::randn(&[4], &mut rng);
        let o_t = Tensor::randn(&[4], &mut rng);
        let noise = Tensor::randn(&[4], &mut rng);
        let out = ddpm_posterior_step(&o_hat, &o_t, 1, &noise, &s).unwrap();
        for (a, b) in out.data().iter().zip(o_hat.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn q_sample_monte_carlo_variance() {
        // Sample variance over 1e5 unit-normal noises matches 1 - alpha_bar within 2%.
        let s = VarianceSchedule::linear(DEFAULT_T, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        let t = DEFAULT_T / 2;
        let x0 = Tensor::scalar(0.7).reshape(&[1]).unwrap();
        let mut rng = RngKey::new(99).rng();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let noise = Tensor::randn(&[1], &mut rng);
            let v = q_sample(&x0, t, &noise, &s).unwrap().item();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let want = 1.0 - s.alpha_bar(t);
        assert!(
            (var - want).abs() / want < 0.02,
            "sample var {var} vs {want}"
        );
    }

    #[test]
    fn q_sample_is_affine() {
        // q(x0+y0, t, n1+n2) == q(x0,t,n1) + q(y0,t,n2)
        let s = VarianceSchedule::linear(16, 0.01, 0.3).unwrap();
        let mut rng = RngKey::new(12).rng();
        for t in [1, 8, 16] {
            let x0 = Tensor::randn(&[6], &mut rng);
            let y0 = Tensor::randn(&[6], &mut rng);
            let n1 = Tensor::randn(&[6], &mut rng);
            let n2 = Tensor::randn(&[6], &mut rng);
            let lhs = q_sample(&x0.add(&y0).unwrap(), t, &n1.add(&n2).unwrap(), &s).unwrap();
            let rhs = q_sample(&x0, t, &n1, &s)
                .unwrap()
                .add(&q_sample(&y0, t, &n2, &s).unwrap())
                .unwrap();
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
