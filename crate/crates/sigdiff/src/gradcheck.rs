//! Reverse-mode gradients checked against central finite differences.
//!
//! The oracle never touches the tape: it re-evaluates the forward function at
//! perturbed inputs, so it stays independent of the differentiation path it
//! is checking.

use crate::rng::RngKey;
use crate::tensor::{Result, Tape, Tensor};

pub const FD_STEP: f64 = 1e-5;
/// Differences below this are accepted regardless of relative error.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub points: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub rel_tol: f64,
    pub pass: bool,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {}  worst rel {:.3e}  worst abs {:.3e}  ({} points, tol {:.0e})",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.worst_rel,
            self.worst_abs,
            self.points,
            self.rel_tol,
        )
    }
}

/// Central finite differences of a scalar function of a flat input.
pub fn finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut pt = x.to_vec();
    for i in 0..x.len() {
        let orig = pt[i];
        pt[i] = orig + h;
        let hi = f(&pt);
        pt[i] = orig - h;
        let lo = f(&pt);
        pt[i] = orig;
        grad[i] = (hi - lo) / (2.0 * h);
    }
    grad
}

/// Check reverse-mode gradients of `build` w.r.t. every entry of every input
/// at one point. `build` maps (possibly traced) inputs to a scalar.
pub fn check_point(
    name: &str,
    inputs: &[Tensor],
    build: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    rel_tol: f64,
) -> CheckReport {
    let tape = Tape::new();
    let traced: Vec<Tensor> = inputs.iter().map(|t| tape.var(t)).collect();
    let loss = build(&traced).expect("gradcheck: forward failed");
    let grads = tape.backward(&loss).expect("gradcheck: backward failed");

    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let ad = grads.wrt(&traced[k]).expect("gradcheck: leaf gradient");
        let mut eval = |x: &[f64]| -> f64 {
            let mut plain: Vec<Tensor> = inputs.to_vec();
            plain[k] = Tensor::from_vec(input.shape().to_vec(), x.to_vec()).unwrap();
            build(&plain).expect("gradcheck: perturbed forward failed").item()
        };
        let fd = finite_diff(&mut eval, input.data(), FD_STEP);
        for (a, f) in ad.data().iter().zip(fd.iter()) {
            let abs = (a - f).abs();
            let rel = abs / a.abs().max(f.abs()).max(1e-300);
            if abs > ABS_FLOOR {
                worst_rel = worst_rel.max(rel);
            }
            worst_abs = worst_abs.max(abs);
        }
    }
    CheckReport {
        name: name.to_string(),
        points: 1,
        worst_rel,
        worst_abs,
        rel_tol,
        pass: worst_rel < rel_tol,
    }
}

/// Run `check_point` at several random points and fold the reports.
pub fn check_many(
    name: &str,
    key: RngKey,
    points: usize,
    make_inputs: &dyn Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tensor>,
    build: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    rel_tol: f64,
) -> CheckReport {
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    for p in 0..points {
        let mut rng = key.child(p as u64).rng();
        let inputs = make_inputs(&mut rng);
        let rep = check_point(name, &inputs, build, rel_tol);
        worst_rel = worst_rel.max(rep.worst_rel);
        worst_abs = worst_abs.max(rep.worst_abs);
    }
    CheckReport {
        name: name.to_string(),
        points,
        worst_rel,
        worst_abs,
        rel_tol,
        pass: worst_rel < rel_tol,
    }
}

fn randn_vec(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, rng)
}

/// Entries bounded away from zero (for relu and div denominators).
fn randn_offzero(shape: &[usize], min_abs: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let t = Tensor::randn(shape, rng);
    let data = t
        .data()
        .iter()
        .map(|&v| v.signum() * (v.abs() + min_abs))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Strictly positive entries (for log and sqrt).
fn randn_positive(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let t = Tensor::randn(shape, rng);
    let data = t.data().iter().map(|&v| v.abs() + 0.5).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// A random linear probe turns any output into a scalar so the full
/// vector-Jacobian product is exercised, not just the sum cotangent.
fn probe(out: &Tensor, rng_seed: u64) -> Result<Tensor> {
    let mut rng = RngKey::new(rng_seed).rng();
    let r = Tensor::randn(out.shape(), &mut rng);
    out.mul(&r)?.sum()
}

/// Gradient checks for every primitive tensor operation, 10 random points each.
pub fn check_primitive_ops(key: RngKey) -> Vec<CheckReport> {
    const TOL: f64 = 1e-5;
    const PTS: usize = 10;
    let mut out = Vec::new();
    let mut c = 0u64;
    let next = |idx: &mut u64| {
        *idx += 1;
        key.child(1000 + *idx)
    };

    out.push(check_many(
        "add",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[3, 4], rng), randn_vec(&[3, 4], rng)],
        &|x| probe(&x[0].add(&x[1])?, 11),
        TOL,
    ));
    out.push(check_many(
        "add (broadcast)",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[1, 4], rng), randn_vec(&[3, 4], rng)],
        &|x| probe(&x[0].add(&x[1])?, 12),
        TOL,
    ));
    out.push(check_many(
        "sub",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[5], rng), randn_vec(&[5], rng)],
        &|x| probe(&x[0].sub(&x[1])?, 13),
        TOL,
    ));
    out.push(check_many(
        "mul",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[2, 3], rng), randn_vec(&[2, 3], rng)],
        &|x| probe(&x[0].mul(&x[1])?, 14),
        TOL,
    ));
    out.push(check_many(
        "div",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[6], rng), randn_offzero(&[6], 0.5, rng)],
        &|x| probe(&x[0].div(&x[1])?, 15),
        TOL,
    ));
    out.push(check_many(
        "matmul",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[3, 4], rng), randn_vec(&[4, 2], rng)],
        &|x| probe(&x[0].matmul(&x[1])?, 16),
        TOL,
    ));
    out.push(check_many(
        "matmul (vector rhs)",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[3, 4], rng), randn_vec(&[4], rng)],
        &|x| probe(&x[0].matmul(&x[1])?, 17),
        TOL,
    ));
    out.push(check_many(
        "concat",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[2, 3], rng), randn_vec(&[1, 3], rng), randn_vec(&[2, 3], rng)],
        &|x| probe(&Tensor::concat(x)?, 18),
        TOL,
    ));
    out.push(check_many(
        "slice",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[4, 5], rng)],
        &|x| probe(&x[0].slice(&[1, 2], &[2, 3])?, 19),
        TOL,
    ));
    out.push(check_many(
        "sum",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[7], rng)],
        &|x| x[0].sum(),
        TOL,
    ));
    out.push(check_many(
        "mean",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[3, 3], rng)],
        &|x| x[0].mean(),
        TOL,
    ));
    out.push(check_many(
        "exp",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[5], rng)],
        &|x| probe(&x[0].exp()?, 20),
        TOL,
    ));
    out.push(check_many(
        "log",
        next(&mut c),
        PTS,
        &|rng| vec![randn_positive(&[5], rng)],
        &|x| probe(&x[0].log()?, 21),
        TOL,
    ));
    out.push(check_many(
        "sqrt",
        next(&mut c),
        PTS,
        &|rng| vec![randn_positive(&[5], rng)],
        &|x| probe(&x[0].sqrt()?, 22),
        TOL,
    ));
    out.push(check_many(
        "relu",
        next(&mut c),
        PTS,
        // keep inputs away from the kink at 0 where the derivative is undefined
        &|rng| vec![randn_offzero(&[6], 0.1, rng)],
        &|x| probe(&x[0].relu()?, 23),
        TOL,
    ));
    out.push(check_many(
        "sigmoid",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[6], rng)],
        &|x| probe(&x[0].sigmoid()?, 24),
        TOL,
    ));
    out.push(check_many(
        "gather",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[5, 2], rng)],
        &|x| probe(&x[0].gather(&[4, 0, 0, 2])?, 25),
        TOL,
    ));
    out.push(check_many(
        "scatter_add",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[4, 2], rng), randn_vec(&[3, 2], rng)],
        &|x| probe(&x[0].scatter_add(&[1, 1, 3], &x[1])?, 26),
        TOL,
    ));
    out.push(check_many(
        "softplus",
        next(&mut c),
        PTS,
        &|rng| vec![randn_vec(&[6], rng)],
        &|x| probe(&x[0].softplus()?, 27),
        TOL,
    ));
    out
}

/// Full Jacobian check: reverse mode through every output coordinate against
/// finite-difference columns.
pub fn check_jacobian(
    name: &str,
    input: &Tensor,
    f: &dyn Fn(&Tensor) -> crate::forward_models::Result<Tensor>,
    rel_tol: f64,
) -> CheckReport {
    let out_plain = f(input).expect("gradcheck: forward failed");
    let (n_in, n_out) = (input.numel(), out_plain.numel());

    // finite-difference Jacobian, column by column
    let mut jac_fd = vec![0.0; n_out * n_in];
    let mut pt = input.data().to_vec();
    for i in 0..n_in {
        let orig = pt[i];
        pt[i] = orig + FD_STEP;
        let hi = f(&Tensor::from_vec(input.shape().to_vec(), pt.clone()).unwrap()).unwrap();
        pt[i] = orig - FD_STEP;
        let lo = f(&Tensor::from_vec(input.shape().to_vec(), pt.clone()).unwrap()).unwrap();
        pt[i] = orig;
        for j in 0..n_out {
            jac_fd[j * n_in + i] = (hi.data()[j] - lo.data()[j]) / (2.0 * FD_STEP);
        }
    }

    // reverse-mode Jacobian, row by row (backward per output coordinate)
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    for j in 0..n_out {
        let tape = Tape::new();
        let x = tape.var(input);
        let out = f(&x).expect("gradcheck: traced forward failed");
        let mut probe = vec![0.0; n_out];
        probe[j] = 1.0;
        let loss = out
            .flatten()
            .and_then(|o| o.mul(&Tensor::from_vec(vec![n_out], probe).unwrap()))
            .and_then(|o| o.sum())
            .expect("gradcheck: probe failed");
        let row = tape
            .backward(&loss)
            .and_then(|g| g.wrt(&x))
            .expect("gradcheck: backward failed");
        for (i, a) in row.data().iter().enumerate() {
            let fd = jac_fd[j * n_in + i];
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs()).max(1e-300);
            if abs > ABS_FLOOR {
                worst_rel = worst_rel.max(rel);
            }
            worst_abs = worst_abs.max(abs);
        }
    }
    CheckReport {
        name: name.to_string(),
        points: 1,
        worst_rel,
        worst_abs,
        rel_tol,
        pass: worst_rel < rel_tol,
    }
}

/// Jacobian checks for the three toy forward models at several random points.
pub fn check_forward_models(key: RngKey, points: usize) -> Vec<CheckReport> {
    use crate::forward_models::{
        CameraPose, ForwardModel, GeneratorModel, PatchCoords, RenderModel, WarpModel,
    };
    const TOL: f64 = 1e-4;
    let mut out = Vec::new();

    let render = RenderModel::new(3, 3, 4, 6).unwrap();
    let pose = CameraPose::new(0.6, 0.05);
    let mut worst = CheckReport {
        name: "render".into(),
        points,
        worst_rel: 0.0,
        worst_abs: 0.0,
        rel_tol: TOL,
        pass: true,
    };
    for p in 0..points {
        let mut rng = key.child(100 + p as u64).rng();
        let scene = Tensor::randn(&[3, 3, 4], &mut rng);
        let rep = check_jacobian("render", &scene, &|s| render.apply(s, &pose), TOL);
        worst.worst_rel = worst.worst_rel.max(rep.worst_rel);
        worst.worst_abs = worst.worst_abs.max(rep.worst_abs);
    }
    worst.pass = worst.worst_rel < TOL;
    out.push(worst);

    let warp = WarpModel::new(6);
    let phi = 1.0;
    let mut worst = CheckReport {
        name: "warp".into(),
        points,
        worst_rel: 0.0,
        worst_abs: 0.0,
        rel_tol: TOL,
        pass: true,
    };
    for p in 0..points {
        // keep splat destinations away from integer tap boundaries so the
        // finite-difference window does not straddle a kernel switch
        let mut attempt = 0u64;
        let signal = loop {
            let mut rng = key.child(200 + p as u64 * 97 + attempt).rng();
            let cand = Tensor::randn(&[6, 4], &mut rng);
            let ok = (0..6).all(|u| {
                let x = u as f64 + phi * cand.data()[u * 4 + 3];
                let frac = x - x.floor();
                (0.01..=0.99).contains(&frac)
            });
            if ok {
                break cand;
            }
            attempt += 1;
        };
        let rep = check_jacobian("warp", &signal, &|s| warp.apply(s, &phi), TOL);
        worst.worst_rel = worst.worst_rel.max(rep.worst_rel);
        worst.worst_abs = worst.worst_abs.max(rep.worst_abs);
    }
    worst.pass = worst.worst_rel < TOL;
    out.push(worst);

    let generator = GeneratorModel::seeded(key.child(300), 16, 32, 8, 8, 4, 4).unwrap();
    let patch = PatchCoords { row: 2, col: 1 };
    let mut worst = CheckReport {
        name: "synthesize".into(),
        points,
        worst_rel: 0.0,
        worst_abs: 0.0,
        rel_tol: 1e-5,
        pass: true,
    };
    for p in 0..points {
        let mut rng = key.child(400 + p as u64).rng();
        let w = Tensor::randn(&[16], &mut rng);
        let rep = check_jacobian("synthesize", &w, &|s| generator.apply(s, &patch), 1e-5);
        worst.worst_rel = worst.worst_rel.max(rep.worst_rel);
        worst.worst_abs = worst.worst_abs.max(rep.worst_abs);
    }
    worst.pass = worst.worst_rel < worst.rel_tol;
    out.push(worst);

    out
}
