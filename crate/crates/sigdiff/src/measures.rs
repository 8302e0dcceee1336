//! Empirical-measure machinery: pushforwards, change of variables,
//! left-inverse recovery, the slice identity, and the two-sample statistics
//! that back the distributional acceptance tests.
//!
//! Degenerate pushforwards (an embedding like `x -> (x, 0)`) are kept as
//! exact sample sets; no density representation is attempted for them.

use crate::rng::RngKey;
use crate::tensor::{Tensor, TensorError};
use rand::Rng;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("empty measure rejected")]
    Empty,
    #[error("dimension mismatch: {lhs} vs {rhs}")]
    DimMismatch { lhs: usize, rhs: usize },
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("left-inverse round trip failed at sample {index}: error {error:.3e} exceeds {tol:.3e}")]
    RoundTrip { index: usize, error: f64, tol: f64 },
    #[error("density evaluation non-finite at {point:?}")]
    NonFiniteDensity { point: Vec<f64> },
    #[error("{0} requires 1-dimensional samples")]
    NeedsOneDim(&'static str),
    #[error("{0} does not support weighted measures")]
    WeightedUnsupported(&'static str),
    #[error("Monte Carlo draw count must be positive")]
    ZeroDraws,
    #[error("chi-square: {0}")]
    ChiSquare(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

/// A finite sample set standing in for a probability measure.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    samples: Tensor, // [N, d]
    weights: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    /// Uniformly weighted samples; `samples` must be an `[N, d]` tensor.
    pub fn new(samples: Tensor) -> Result<Self> {
        if samples.shape().len() != 2 || samples.shape()[0] == 0 {
            return Err(MeasureError::Empty);
        }
        Ok(EmpiricalMeasure {
            samples,
            weights: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(MeasureError::Empty);
        }
        let d = rows[0].len();
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(MeasureError::DimMismatch {
                    lhs: d,
                    rhs: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Self::new(Tensor::from_vec(vec![rows.len(), d], flat)?)
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(Tensor::from_vec(
            vec![values.len(), 1],
            values.to_vec(),
        )?)
    }

    /// Non-negative weights summing to 1 within 1e-12.
    pub fn weighted(samples: Tensor, weights: Vec<f64>) -> Result<Self> {
        if samples.shape().len() != 2 || samples.shape()[0] == 0 {
            return Err(MeasureError::Empty);
        }
        if weights.len() != samples.shape()[0] {
            return Err(MeasureError::Weights(format!(
                "{} weights for {} samples",
                weights.len(),
                samples.shape()[0]
            )));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(MeasureError::Weights("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MeasureError::Weights(format!("weights sum to {total}")));
        }
        Ok(EmpiricalMeasure {
            samples,
            weights: Some(weights),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.samples.data()[i * d..(i + 1) * d]
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i)[j]).collect()
    }

    /// Draw a sample index according to the weights.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.weights {
            None => rng.random_range(0..self.len()),
            Some(w) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, wi) in w.iter().enumerate() {
                    acc += wi;
                    if u < acc {
                        return i;
                    }
                }
                self.len() - 1
            }
        }
    }
}

/// Pushforward by mapping every sample; weights carry over unchanged.
/// Operationally: to sample `y ~ f_* mu`, sample `x ~ mu` and set `y = f(x)`.
pub fn pushforward(mu: &EmpiricalMeasure, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<EmpiricalMeasure> {
    let n = mu.len();
    let first = f(mu.row(0));
    let d_out = first.len();
    let mut flat = Vec::with_capacity(n * d_out);
    flat.extend_from_slice(&first);
    for i in 1..n {
        let y = f(mu.row(i));
        if y.len() != d_out {
            return Err(MeasureError::DimMismatch {
                lhs: d_out,
                rhs: y.len(),
            });
        }
        flat.extend_from_slice(&y);
    }
    let samples = Tensor::from_vec(vec![n, d_out], flat)?;
    match &mu.weights {
        Some(w) => EmpiricalMeasure::weighted(samples, w.clone()),
        None => EmpiricalMeasure::new(samples),
    }
}

/// A (possibly unnormalized) density evaluator.
#[derive(Clone)]
pub struct DensityFn {
    eval: Rc<dyn Fn(&[f64]) -> f64>,
    /// Normalizing constant Z when known (1 for a normalized density).
    pub normalization: Option<f64>,
}

impl DensityFn {
    pub fn new(f: impl Fn(&[f64]) -> f64 + 'static) -> Self {
        DensityFn {
            eval: Rc::new(f),
            normalization: None,
        }
    }

    pub fn normalized(f: impl Fn(&[f64]) -> f64 + 'static) -> Self {
        DensityFn {
            eval: Rc::new(f),
            normalization: Some(1.0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = (self.eval)(x);
        if v.is_nan() {
            return Err(MeasureError::NonFiniteDensity { point: x.to_vec() });
        }
        Ok(v)
    }

    pub fn standard_normal_1d() -> Self {
        DensityFn::normalized(|x: &[f64]| {
            (-(x[0] * x[0]) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
        })
    }
}

/// Density of the pushforward when `f` is a diffeomorphism on the evaluation
/// region: `p(f^{-1}(y)) |det d f^{-1}(y)|`. Non-finite Jacobians surface as
/// per-point evaluation errors.
pub fn change_of_variables_density(
    p: &DensityFn,
    f_inv: impl Fn(&[f64]) -> Vec<f64> + 'static,
    jac_det_f_inv: impl Fn(&[f64]) -> f64 + 'static,
) -> DensityFn {
    let p = p.clone();
    let norm = p.normalization;
    DensityFn {
        eval: Rc::new(move |y: &[f64]| {
            let x = f_inv(y);
            let jac = jac_det_f_inv(y);
            (p.eval)(&x) * jac.abs()
        }),
        normalization: norm,
    }
}

#[derive(Debug, Clone)]
pub struct LeftInverseReport {
    /// Worst max-abs round-trip error over all samples.
    pub max_roundtrip_error: f64,
    /// Statistical distance between recovered and original samples (0 when exact).
    pub distance: f64,
    pub n: usize,
}

/// Check `f_left_inv(f(x)) == x` pointwise on the samples, then push the
/// measure through both maps and report the recovery error.
pub fn verify_left_inverse(
    mu: &EmpiricalMeasure,
    f: impl Fn(&[f64]) -> Vec<f64> + Copy,
    f_left_inv: impl Fn(&[f64]) -> Vec<f64> + Copy,
    tol: f64,
) -> Result<LeftInverseReport> {
    let mut worst = 0.0f64;
    let mut worst_idx = 0usize;
    for i in 0..mu.len() {
        let x = mu.row(i);
        let back = f_left_inv(&f(x));
        if back.len() != x.len() {
            return Err(MeasureError::DimMismatch {
                lhs: x.len(),
                rhs: back.len(),
            });
        }
        let err = back
            .iter()
            .zip(x.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if err > worst {
            worst = err;
            worst_idx = i;
        }
    }
    if worst > tol {
        return Err(MeasureError::RoundTrip {
            index: worst_idx,
            error: worst,
            tol,
        });
    }
    let recovered = pushforward(&pushforward(mu, f)?, f_left_inv)?;
    let mut distance = 0.0f64;
    for i in 0..mu.len() {
        for (a, b) in recovered.row(i).iter().zip(mu.row(i)) {
            distance = distance.max((a - b).abs());
        }
    }
    Ok(LeftInverseReport {
        max_roundtrip_error: worst,
        distance,
        n: mu.len(),
    })
}

/// Grid layout of a total observation: `poses` slices of `pixels x channels`.
#[derive(Debug, Clone, Copy)]
pub struct TotalGrid {
    pub poses: usize,
    pub pixels: usize,
    pub channels: usize,
}

impl TotalGrid {
    pub fn flat_len(&self) -> usize {
        self.poses * self.pixels * self.channels
    }

    pub fn index(&self, pixel: usize, channel: usize, pose: usize) -> usize {
        (pose * self.pixels + pixel) * self.channels + channel
    }
}

#[derive(Debug, Clone)]
pub struct SliceIdentityReport {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub n_mc: usize,
}

impl SliceIdentityReport {
    pub fn combined_stderr(&self) -> f64 {
        (self.lhs_stderr.powi(2) + self.rhs_stderr.powi(2)).sqrt()
    }

    /// |lhs - rhs| within `k` combined standard errors.
    pub fn agrees(&self, k: f64) -> bool {
        (self.lhs - self.rhs).abs() <= k * self.combined_stderr()
    }
}

/// Monte Carlo check of the slice identity: averaging `g` over jointly random
/// (pixel, channel, pose, total observation) equals averaging pose-wise slice
/// means. LHS draws everything at random; RHS draws the total observation and
/// enumerates poses and slices exactly.
pub fn slice_identity_check(
    g: &dyn Fn(usize, usize, usize, &[f64]) -> f64,
    mu: &EmpiricalMeasure,
    grid: TotalGrid,
    n_mc: usize,
    key: RngKey,
) -> Result<SliceIdentityReport> {
    if n_mc == 0 {
        return Err(MeasureError::ZeroDraws);
    }
    if mu.dim() != grid.flat_len() {
        return Err(MeasureError::DimMismatch {
            lhs: mu.dim(),
            rhs: grid.flat_len(),
        });
    }
    let mut rng = key.child(0).rng();
    let (mut lhs_sum, mut lhs_sq) = (0.0, 0.0);
    for _ in 0..n_mc {
        let total = mu.row(mu.sample_index(&mut rng));
        let pose = rng.random_range(0..grid.poses);
        let pixel = rng.random_range(0..grid.pixels);
        let channel = rng.random_range(0..grid.channels);
        let v = g(pixel, channel, pose, total);
        lhs_sum += v;
        lhs_sq += v * v;
    }
    let n = n_mc as f64;
    let lhs = lhs_sum / n;
    let lhs_var = (lhs_sq / n - lhs * lhs).max(0.0);
    let lhs_stderr = (lhs_var / n).sqrt();

    let mut rng = key.child(1).rng();
    let (mut rhs_sum, mut rhs_sq) = (0.0, 0.0);
    for _ in 0..n_mc {
        let total = mu.row(mu.sample_index(&mut rng));
        let mut pose_acc = 0.0;
        for pose in 0..grid.poses {
            let mut slice_acc = 0.0;
            for pixel in 0..grid.pixels {
                for channel in 0..grid.channels {
                    slice_acc += g(pixel, channel, pose, total);
                }
            }
            pose_acc += slice_acc / (grid.pixels * grid.channels) as f64;
        }
        let v = pose_acc / grid.poses as f64;
        rhs_sum += v;
        rhs_sq += v * v;
    }
    let rhs = rhs_sum / n;
    let rhs_var = (rhs_sq / n - rhs * rhs).max(0.0);
    let rhs_stderr = (rhs_var / n).sqrt();

    Ok(SliceIdentityReport {
        lhs,
        lhs_stderr,
        rhs,
        rhs_stderr,
        n_mc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Energy,
    KsPerCoordinate,
    Wasserstein1,
}

/// The named two-sample statistic between empirical measures.
pub fn two_sample_distance(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    kind: DistanceKind,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MeasureError::Empty);
    }
    if a.dim() != b.dim() {
        return Err(MeasureError::DimMismatch {
            lhs: a.dim(),
            rhs: b.dim(),
        });
    }
    match kind {
        DistanceKind::Energy => energy_distance(a, b),
        DistanceKind::KsPerCoordinate => {
            let mut worst = 0.0f64;
            for j in 0..a.dim() {
                worst = worst.max(ks_statistic_1d(
                    &weighted_column(a, j),
                    &weighted_column(b, j),
                ));
            }
            Ok(worst)
        }
        DistanceKind::Wasserstein1 => {
            if a.dim() != 1 {
                return Err(MeasureError::NeedsOneDim("wasserstein1_1d"));
            }
            Ok(wasserstein1_1d(
                &weighted_column(a, 0),
                &weighted_column(b, 0),
            ))
        }
    }
}

fn weighted_column(m: &EmpiricalMeasure, j: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = (0..m.len()).map(|i| (m.row(i)[j], m.weight(i))).collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN sample"));
    out
}

/// Energy distance `2 E|X-Y| - E|X-X'| - E|Y-Y'|` (V-statistic). Uses an
/// O(n log n) prefix-sum path in one dimension and the direct double sum above.
pub fn energy_distance(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim() == 1 {
        let xs = weighted_column(a, 0);
        let ys = weighted_column(b, 0);
        let cross = mean_abs_cross_sorted(&xs, &ys);
        let within_a = mean_abs_cross_sorted(&xs, &xs);
        let within_b = mean_abs_cross_sorted(&ys, &ys);
        return Ok(2.0 * cross - within_a - within_b);
    }
    let d = a.dim();
    let dist = |x: &[f64], y: &[f64]| -> f64 {
        (0..d).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>().sqrt()
    };
    let pair_mean = |p: &EmpiricalMeasure, q: &EmpiricalMeasure| -> f64 {
        let mut acc = 0.0;
        for i in 0..p.len() {
            let (xi, wi) = (p.row(i), p.weight(i));
            for j in 0..q.len() {
                acc += wi * q.weight(j) * dist(xi, q.row(j));
            }
        }
        acc
    };
    Ok(2.0 * pair_mean(a, b) - pair_mean(a, a) - pair_mean(b, b))
}

/// `sum_ij w_i v_j |x_i - y_j|` for weight-sorted 1-D samples, in O(n + m)
/// after sorting, via prefix sums over the merged order.
fn mean_abs_cross_sorted(xs: &[(f64, f64)], ys: &[(f64, f64)]) -> f64 {
    // For each x: sum_j v_j |x - y_j| = x (V_le - V_gt) - (S_le - S_gt)
    // where V/S are weight and weighted-value prefix sums of y at x.
    let total_v: f64 = ys.iter().map(|(_, w)| *w).sum();
    let total_s: f64 = ys.iter().map(|(y, w)| y * w).sum();
    let mut acc = 0.0;
    let mut j = 0usize;
    let (mut v_le, mut s_le) = (0.0, 0.0);
    for &(x, wx) in xs {
        while j < ys.len() && ys[j].0 <= x {
            v_le += ys[j].1;
            s_le += ys[j].0 * ys[j].1;
            j += 1;
        }
        let v_gt = total_v - v_le;
        let s_gt = total_s - s_le;
        acc += wx * (x * (v_le - v_gt) - (s_le - s_gt));
    }
    acc
}

/// Two-sample Kolmogorov-Smirnov statistic on sorted weighted 1-D samples.
fn ks_statistic_1d(xs: &[(f64, f64)], ys: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut sup = 0.0f64;
    while i < xs.len() || j < ys.len() {
        let xv = xs.get(i).map(|p| p.0).unwrap_or(f64::INFINITY);
        let yv = ys.get(j).map(|p| p.0).unwrap_or(f64::INFINITY);
        let v = xv.min(yv);
        while i < xs.len() && xs[i].0 == v {
            fa += xs[i].1;
            i += 1;
        }
        while j < ys.len() && ys[j].0 == v {
            fb += ys[j].1;
            j += 1;
        }
        sup = sup.max((fa - fb).abs());
    }
    sup
}

/// 1-D Wasserstein-1 distance: integral of |F_a - F_b| over the merged support.
fn wasserstein1_1d(xs: &[(f64, f64)], ys: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut acc = 0.0f64;
    let mut prev: Option<f64> = None;
    while i < xs.len() || j < ys.len() {
        let xv = xs.get(i).map(|p| p.0).unwrap_or(f64::INFINITY);
        let yv = ys.get(j).map(|p| p.0).unwrap_or(f64::INFINITY);
        let v = xv.min(yv);
        if let Some(p) = prev {
            acc += (fa - fb).abs() * (v - p);
        }
        while i < xs.len() && xs[i].0 == v {
            fa += xs[i].1;
            i += 1;
        }
        while j < ys.len() && ys[j].0 == v {
            fb += ys[j].1;
            j += 1;
        }
        prev = Some(v);
    }
    acc
}

#[derive(Debug, Clone)]
pub struct PermutationReport {
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub n_perms: usize,
    pub alpha: f64,
}

impl PermutationReport {
    /// True when the null hypothesis (same distribution) is not rejected.
    pub fn accepts_null(&self) -> bool {
        self.statistic <= self.threshold
    }
}

/// Permutation test on the energy distance between uniform measures.
pub fn energy_permutation_test(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    n_perms: usize,
    alpha: f64,
    key: RngKey,
) -> Result<PermutationReport> {
    if a.is_weighted() || b.is_weighted() {
        return Err(MeasureError::WeightedUnsupported("energy_permutation_test"));
    }
    let statistic = two_sample_distance(a, b, DistanceKind::Energy)?;
    let (n, d) = (a.len(), a.dim());
    let mut pool: Vec<f64> = Vec::with_capacity((a.len() + b.len()) * d);
    pool.extend_from_slice(a.samples().data());
    pool.extend_from_slice(b.samples().data());
    let total = a.len() + b.len();
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = key.rng();
    let mut perm_stats = Vec::with_capacity(n_perms);
    for _ in 0..n_perms {
        // Fisher-Yates over row indices.
        for i in (1..total).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let rows = |idx: &[usize]| -> Vec<f64> {
            let mut out = Vec::with_capacity(idx.len() * d);
            for &r in idx {
                out.extend_from_slice(&pool[r * d..(r + 1) * d]);
            }
            out
        };
        let pa = EmpiricalMeasure::new(Tensor::from_vec(vec![n, d], rows(&order[..n]))?)?;
        let pb = EmpiricalMeasure::new(Tensor::from_vec(
            vec![total - n, d],
            rows(&order[n..]),
        )?)?;
        perm_stats.push(two_sample_distance(&pa, &pb, DistanceKind::Energy)?);
    }
    let exceed = perm_stats.iter().filter(|s| **s >= statistic).count();
    let p_value = (exceed + 1) as f64 / (n_perms + 1) as f64;
    perm_stats.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let idx = (((1.0 - alpha) * n_perms as f64).ceil() as usize).min(n_perms - 1);
    Ok(PermutationReport {
        statistic,
        threshold: perm_stats[idx],
        p_value,
        n_perms,
        alpha,
    })
}

#[derive(Debug, Clone)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub alpha: f64,
}

impl ChiSquareReport {
    pub fn passes(&self) -> bool {
        self.statistic <= self.critical
    }
}

/// Goodness-of-fit against fully specified bin probabilities (dof = k - 1).
pub fn chi_square_gof(counts: &[u64], probs: &[f64], alpha: f64) -> Result<ChiSquareReport> {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if counts.len() != probs.len() || counts.len() < 2 {
        return Err(MeasureError::ChiSquare(format!(
            "{} bins vs {} probabilities",
            counts.len(),
            probs.len()
        )));
    }
    let n: u64 = counts.iter().sum();
    let mut statistic = 0.0;
    for (c, p) in counts.iter().zip(probs.iter()) {
        let expected = n as f64 * p;
        if expected <= 0.0 {
            return Err(MeasureError::ChiSquare("non-positive expected count".into()));
        }
        statistic += (*c as f64 - expected).powi(2) / expected;
    }
    let dof = counts.len() - 1;
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| MeasureError::ChiSquare(e.to_string()))?;
    Ok(ChiSquareReport {
        statistic,
        dof,
        critical: dist.inverse_cdf(1.0 - alpha),
        alpha,
    })
}

/// Equal-width histogram over [lo, hi); values outside are dropped.
pub fn histogram_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        if v >= lo && v < hi {
            let b = ((v - lo) / width) as usize;
            counts[b.min(bins - 1)] += 1;
        }
    }
    counts
}

/// W1 distance between a 1-D empirical sample and a Gaussian, by matching
/// sorted samples against the Gaussian quantiles at midpoint probabilities.
/// A zero-variance Gaussian degenerates to the mean.
pub fn w1_empirical_vs_gaussian(samples: &[f64], mean: f64, std: f64) -> Result<f64> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if samples.is_empty() {
        return Err(MeasureError::Empty);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("NaN sample"));
    let n = xs.len();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let total: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let q = if std > 0.0 {
                mean + std * normal.inverse_cdf((i as f64 + 0.5) / n as f64)
            } else {
                mean
            };
            (x - q).abs()
        })
        .sum();
    Ok(total / n as f64)
}

/// Trapezoidal quadrature of a density over the given grid points.
pub fn trapezoid(density: &DensityFn, grid: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    let mut prev = density.eval(&[grid[0]])?;
    for w in grid.windows(2) {
        let next = density.eval(&[w[1]])?;
        acc += (w[1] - w[0]) * 0.5 * (prev + next);
        prev = next;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_normal_samples(n: usize, seed: u64) -> EmpiricalMeasure {
        let mut rng = RngKey::new(seed).rng();
        EmpiricalMeasure::new(Tensor::randn(&[n, 1], &mut rng)).unwrap()
    }

    #[test]
    fn pushforward_identity_is_noop() {
        let mu = unit_normal_samples(64, 1);
        let out = pushforward(&mu, |x| x.to_vec()).unwrap();
        assert!(out.samples().bit_eq(mu.samples()));
    }

    #[test]
    fn embedding_concentrates_on_line() {
        // f(x) = (x, 0): every output sample has second coordinate exactly 0.
        let mu = unit_normal_samples(512, 2);
        let out = pushforward(&mu, |x| vec![x[0], 0.0]).unwrap();
        for i in 0..out.len() {
            assert_eq!(out.row(i)[1], 0.0);
        }
    }

    #[test]
    fn pushforward_is_functorial() {
        let mu = unit_normal_samples(128, 3);
        let f = |x: &[f64]| vec![2.0 * x[0], x[0] - 1.0];
        let g = |y: &[f64]| vec![y[0] * y[1]];
        let two_step = pushforward(&pushforward(&mu, f).unwrap(), g).unwrap();
        let composed = pushforward(&mu, |x| g(&f(x))).unwrap();
        assert!(two_step.samples().bit_eq(composed.samples()));
    }

    #[test]
    fn change_of_variables_gaussian_scaling() {
        // f(x) = 2x pushes N(0,1) to N(0,4).
        let p = DensityFn::standard_normal_1d();
        let q = change_of_variables_density(&p, |y| vec![y[0] / 2.0], |_| 0.5);
        let points: &[f64] = &[-3.0, -0.7, 0.0, 1.3, 2.5];
        for &y in points {
            let want = (-(y * y) / 8.0).exp() / (2.0 * (2.0 * std::f64::consts::PI).sqrt());
            assert!((q.eval(&[y]).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn change_of_variables_identity() {
        let p = DensityFn::standard_normal_1d();
        let q = change_of_variables_density(&p, |y| y.to_vec(), |_| 1.0);
        for &y in &[-1.0, 0.0, 2.0] {
            assert_eq!(q.eval(&[y]).unwrap(), p.eval(&[y]).unwrap());
        }
    }

    #[test]
    fn cube_density_blows_up_at_origin() {
        // Pushforward of uniform[-1,1] through x^3 has density |y|^(-2/3)/6.
        let p = DensityFn::normalized(|x: &[f64]| if x[0].abs() <= 1.0 { 0.5 } else { 0.0 });
        let q = change_of_variables_density(
            &p,
            |y| vec![y[0].cbrt()],
            |y| y[0].abs().powf(-2.0 / 3.0) / 3.0,
        );
        let near = q.eval(&[0.001]).unwrap();
        let far = q.eval(&[0.5]).unwrap();
        assert!(near > 10.0 * far, "near={near} far={far}");
    }

    #[test]
    fn left_inverse_embedding_recovers_exactly() {
        let mu = unit_normal_samples(256, 4);
        let rep = verify_left_inverse(&mu, |x| vec![x[0], 0.0], |y| vec![y[0]], 0.0).unwrap();
        assert_eq!(rep.distance, 0.0);
        assert_eq!(rep.max_roundtrip_error, 0.0);
    }

    #[test]
    fn left_inverse_identity() {
        let mu = unit_normal_samples(64, 5);
        let rep = verify_left_inverse(&mu, |x| x.to_vec(), |y| y.to_vec(), 0.0).unwrap();
        assert_eq!(rep.distance, 0.0);
    }

    #[test]
    fn left_inverse_cube_root_within_float_tolerance() {
        let mu = unit_normal_samples(256, 6);
        let rep = verify_left_inverse(
            &mu,
            |x| vec![x[0].powi(3)],
            |y| vec![y[0].cbrt()],
            1e-12,
        )
        .unwrap();
        assert!(rep.max_roundtrip_error <= 1e-12);
    }

    #[test]
    fn left_inverse_failure_reports_worst_offender() {
        let mu = EmpiricalMeasure::from_scalars(&[1.0, 5.0]).unwrap();
        let err = verify_left_inverse(&mu, |x| vec![x[0]], |y| vec![y[0] + y[0].abs()], 1e-9)
            .unwrap_err();
        match err {
            MeasureError::RoundTrip { index, error, .. } => {
                assert_eq!(index, 1);
                assert!((error - 5.0).abs() < 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let a = unit_normal_samples(200, 7);
        for kind in [
            DistanceKind::Energy,
            DistanceKind::KsPerCoordinate,
            DistanceKind::Wasserstein1,
        ] {
            let d = two_sample_distance(&a, &a, kind).unwrap();
            assert_eq!(d, 0.0, "{kind:?}");
        }
    }

    #[test]
    fn energy_fast_path_matches_naive() {
        // Embed 1-D samples as [n,1] (fast path) and compare with a hand sum.
        let a = unit_normal_samples(40, 8);
        let b = unit_normal_samples(55, 9);
        let fast = energy_distance(&a, &b).unwrap();
        let pair = |p: &EmpiricalMeasure, q: &EmpiricalMeasure| -> f64 {
            let mut acc = 0.0;
            for i in 0..p.len() {
                for j in 0..q.len() {
                    acc += p.weight(i) * q.weight(j) * (p.row(i)[0] - q.row(j)[0]).abs();
                }
            }
            acc
        };
        let naive = 2.0 * pair(&a, &b) - pair(&a, &a) - pair(&b, &b);
        assert!((fast - naive).abs() < 1e-10, "{fast} vs {naive}");
    }

    #[test]
    fn wasserstein_of_shifted_gaussians_is_the_shift() {
        let mut rng = RngKey::new(10).rng();
        let a = EmpiricalMeasure::new(Tensor::randn(&[10_000, 1], &mut rng)).unwrap();
        let shifted: Vec<f64> = a.samples().data().iter().map(|v| v + 1.0).collect();
        let b = EmpiricalMeasure::new(Tensor::from_vec(vec![10_000, 1], shifted).unwrap()).unwrap();
        let d = two_sample_distance(&a, &b, DistanceKind::Wasserstein1).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
    }

    #[test]
    fn independent_shifted_gaussians_wasserstein() {
        let a = unit_normal_samples(10_000, 11);
        let mut rng = RngKey::new(12).rng();
        let b_raw = Tensor::randn(&[10_000, 1], &mut rng);
        let b_data: Vec<f64> = b_raw.data().iter().map(|v| v + 1.0).collect();
        let b = EmpiricalMeasure::new(Tensor::from_vec(vec![10_000, 1], b_data).unwrap()).unwrap();
        let d = two_sample_distance(&a, &b, DistanceKind::Wasserstein1).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
    }

    #[test]
    fn energy_permutation_accepts_same_distribution() {
        let a = unit_normal_samples(2000, 13);
        let b = unit_normal_samples(2000, 14);
        let rep = energy_permutation_test(&a, &b, 200, 0.01, RngKey::new(15)).unwrap();
        assert!(rep.accepts_null(), "stat {} thr {}", rep.statistic, rep.threshold);
    }

    #[test]
    fn energy_permutation_rejects_shifted_distribution() {
        let a = unit_normal_samples(2000, 16);
        let mut rng = RngKey::new(17).rng();
        let raw = Tensor::randn(&[2000, 1], &mut rng);
        let shifted: Vec<f64> = raw.data().iter().map(|v| v + 0.5).collect();
        let b = EmpiricalMeasure::new(Tensor::from_vec(vec![2000, 1], shifted).unwrap()).unwrap();
        let rep = energy_permutation_test(&a, &b, 200, 0.01, RngKey::new(18)).unwrap();
        assert!(!rep.accepts_null());
    }

    #[test]
    fn empty_measure_rejected() {
        assert!(EmpiricalMeasure::from_rows(&[]).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let s = Tensor::from_vec(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert!(EmpiricalMeasure::weighted(s.clone(), vec![0.6, 0.5]).is_err());
        assert!(EmpiricalMeasure::weighted(s, vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn slice_identity_constant_function() {
        let grid = TotalGrid {
            poses: 2,
            pixels: 4,
            channels: 3,
        };
        let mut rng = RngKey::new(19).rng();
        let mu =
            EmpiricalMeasure::new(Tensor::randn(&[10, grid.flat_len()], &mut rng)).unwrap();
        let rep = slice_identity_check(&|_, _, _, _| 0.75, &mu, grid, 1000, RngKey::new(20))
            .unwrap();
        assert_eq!(rep.lhs, 0.75);
        assert_eq!(rep.rhs, 0.75);
        assert_eq!(rep.lhs_stderr, 0.0);
    }

    #[test]
    fn slice_identity_zero_draws_rejected() {
        let grid = TotalGrid {
            poses: 1,
            pixels: 1,
            channels: 1,
        };
        let mu = EmpiricalMeasure::from_scalars(&[1.0]).unwrap();
        assert!(matches!(
            slice_identity_check(&|_, _, _, _| 0.0, &mu, grid, 0, RngKey::new(0)),
            Err(MeasureError::ZeroDraws)
        ));
    }

    #[test]
    fn slice_identity_pose_only_function() {
        // g depending only on the pose: RHS is exact; LHS agrees within 3 stderr.
        let grid = TotalGrid {
            poses: 3,
            pixels: 2,
            channels: 2,
        };
        let mut rng = RngKey::new(21).rng();
        let mu = EmpiricalMeasure::new(Tensor::randn(&[5, grid.flat_len()], &mut rng)).unwrap();
        let g = |_: usize, _: usize, pose: usize, _: &[f64]| (pose * pose) as f64;
        let rep = slice_identity_check(&g, &mu, grid, 20_000, RngKey::new(22)).unwrap();
        let exact = (0.0 + 1.0 + 4.0) / 3.0;
        assert!((rep.rhs - exact).abs() < 1e-12);
        assert!(rep.agrees(3.0), "lhs {} rhs {}", rep.lhs, rep.rhs);
    }

    #[test]
    fn trapezoid_integrates_gaussian() {
        let p = DensityFn::standard_normal_1d();
        let grid: Vec<f64> = (0..=6000).map(|i| -30.0 + i as f64 * 0.01).collect();
        let z = trapezoid(&p, &grid).unwrap();
        assert!((z - 1.0).abs() < 1e-6, "{z}");
    }

    #[test]
    fn chi_square_flat_histogram_passes() {
        let counts = vec![103u64, 97, 99, 101];
        let probs = vec![0.25; 4];
        let rep = chi_square_gof(&counts, &probs, 0.01).unwrap();
        assert!(rep.passes());
    }
}
