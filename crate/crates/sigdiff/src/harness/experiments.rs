//! Per-kind experiment bodies: generate -> train -> sample -> evaluate, with
//! all artifacts written under the run directory.

use super::{ExperimentConfig, ExperimentKind, HarnessError, Result, StatEntry};
use crate::denoiser::{
    save_params, Conditioner, DeterministicEstimator, PlainConditioner,
    RenderConditioner,
};
use crate::diffusion::{
    sample, sample_autoregressive, train, train_deterministic,
};
use crate::forward_models::{ForwardModel, GeneratorModel, MotionSignal, RenderModel};
use crate::io;
use crate::measures::{
    chi_square_gof, change_of_variables_density, energy_permutation_test, histogram_counts,
    pushforward, slice_identity_check, trapezoid, two_sample_distance, verify_left_inverse,
    DensityFn, DistanceKind, EmpiricalMeasure, TotalGrid,
};
use crate::rng::RngKey;
use crate::tensor::Tensor;
use crate::testbeds::{
    analytic_posterior, generate_tuples, BimodalMotionWorld, BimodalSceneWorld, DiscreteWorld,
    LatentPatchWorld, LinearGaussianWorld, PoseRoles, SyntheticWorld,
};
use std::path::Path;

pub(super) fn execute(
    cfg: &ExperimentConfig,
    key: RngKey,
    out: &Path,
) -> Result<(Vec<f64>, Vec<StatEntry>)> {
    match cfg.kind {
        ExperimentKind::LinearGaussian => linear_gaussian(cfg, key, out),
        ExperimentKind::DiscreteProp1 => discrete_prop1(cfg, key, out),
        ExperimentKind::ToyRender => toy_render(cfg, key, out),
        ExperimentKind::MotionWarp => motion_warp(cfg, key, out),
        ExperimentKind::GeneratorInversion => generator_inversion(cfg, key, out),
        ExperimentKind::MeasureSuite => Ok((vec![], measure_suite_stats(key)?)),
    }
}

/// The correlated two-coordinate world with one-dimensional observations
/// used by the linear-Gaussian experiments.
pub fn standard_linear_world() -> Result<LinearGaussianWorld> {
    Ok(LinearGaussianWorld::new(
        vec![0.0, 0.0],
        &[vec![1.0, 0.9], vec![0.9, 1.0]],
        1,
        &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]],
    )?)
}

fn linear_gaussian(
    cfg: &ExperimentConfig,
    key: RngKey,
    out: &Path,
) -> Result<(Vec<f64>, Vec<StatEntry>)> {
    let world = standard_linear_world()?;
    let fm = world.forward_model().clone();
    let sched = cfg.schedule.build()?;
    // novel poses may repeat the context pose: reconstructing the context
    // observation directly supervises the coordinate the target misses
    let roles = PoseRoles::Fixed {
        ctxt: vec![0, 1, 2],
        trgt: vec![0, 1, 2],
        novel: vec![0, 1, 2],
    };
    let tuples = generate_tuples(&world, cfg.dataset_size, true, &roles, key.child(0))?;
    io::write_dataset(&out.join("dataset.bin"), &tuples, cfg.seed)?;

    let mut model = PlainConditioner::new(key.child(1), &fm, sched.t_max(), &cfg.net);
    let report = train(&mut model, &fm, &tuples, &sched, &cfg.train, key.child(2), None)?;
    save_params(&out.join("params"), &model.net_params())?;

    // held-out contexts: (context pose, observed value, sampling target pose)
    let contexts: [(usize, f64, usize); 3] = [(0, -1.0, 1), (0, 0.3, 1), (1, 0.8, 0)];
    let mut stats = Vec::new();
    for (i, (pose, value, trgt_pose)) in contexts.iter().enumerate() {
        let o_ctxt = Tensor::from_vec(vec![1], vec![*value])?;
        let ctxts = vec![(o_ctxt.clone(), *pose)];
        let n = cfg.sampler.eval_samples;
        let mut flat = Vec::with_capacity(n * 2);
        for s in 0..n {
            let r = sample(
                &model,
                &fm,
                &ctxts,
                trgt_pose,
                &sched,
                cfg.sampler.step_variant,
                key.child(100 + i as u64).child(s as u64),
            )?;
            flat.extend_from_slice(r.signal.data());
        }
        let samples = EmpiricalMeasure::new(Tensor::from_vec(vec![n, 2], flat.clone())?)?;
        let oracle = analytic_posterior(&world, &o_ctxt, *pose)?;
        let cmp = super::compare_posteriors_gaussian(&samples, &oracle, 200, key.child(200 + i as u64))?;
        for (coord, (w1, stderr)) in cmp.iter().enumerate() {
            stats.push(
                StatEntry::checked(format!("w1_ctx{i}_coord{coord}"), *w1, 0.1, *w1 < 0.1)
                    .with_stderr(*stderr),
            );
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|r| flat[r * 2..r * 2 + 2].to_vec()).collect();
        io::write_csv(&out.join(format!("posterior_samples_ctx{i}.csv")), "s0,s1", &rows)?;
        let meta = serde_json::json!({
            "context_pose": pose,
            "context_value": value,
            "target_pose": trgt_pose,
            "oracle_mean": oracle.mean,
            "oracle_marginal_std": (0..2).map(|c| oracle.marginal(c).1).collect::<Vec<f64>>(),
            "samples_csv": format!("posterior_samples_ctx{i}.csv"),
        });
        std::fs::write(
            out.join(format!("posterior_ctx{i}.json")),
            serde_json::to_string_pretty(&meta).map_err(|e| HarnessError::Json(e.to_string()))?,
        )
        .map_err(|e| HarnessError::File(out.into(), e))?;
    }
    Ok((report.losses, stats))
}

fn discrete_prop1(
    cfg: &ExperimentConfig,
    key: RngKey,
    out: &Path,
) -> Result<(Vec<f64>, Vec<StatEntry>)> {
    let world = DiscreteWorld::four_corner([0.4, 0.3, 0.2, 0.1])?;
    let fm = world.forward_model().clone();
    let sched = cfg.schedule.build()?;
    // with only two poses, the novel pose coincides with the context pose:
    // reconstructing the context observation is what pins down the signal
    // coordinate the target never sees
    let roles = PoseRoles::Fixed {
        ctxt: vec![0, 1],
        trgt: vec![0, 1],
        novel: vec![0, 1],
    };
    let with_novel = cfg.train.lambda_novel != 0.0;
    let tuples = generate_tuples(&world, cfg.dataset_size, with_novel, &roles, key.child(0))?;
    io::write_dataset(&out.join("dataset.bin"), &tuples, cfg.seed)?;

    let mut model = PlainConditioner::new(key.child(1), &fm, sched.t_max(), &cfg.net);
    let report = train(&mut model, &fm, &tuples, &sched, &cfg.train, key.child(2), None)?;
    save_params(&out.join("params"), &model.net_params())?;

    // the ambiguous context: pose 0 observes +1, shared by signals 0 and 2
    let o_ctxt = Tensor::from_vec(vec![1], vec![1.0])?;
    let truth = world.true_posterior(&o_ctxt, 0)?;
    let ctxts = vec![(o_ctxt, 0usize)];
    let n = cfg.sampler.eval_samples;
    let mut counts = vec![0usize; world.n_signals()];
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        let r = sample(
            &model,
            &fm,
            &ctxts,
            &1usize,
            &sched,
            cfg.sampler.step_variant,
            key.child(100).child(s as u64),
        )?;
        counts[world.classify(r.signal.data())] += 1;
        rows.push(r.signal.data().to_vec());
    }
    io::write_csv(&out.join("sampled_signals.csv"), "s0,s1", &rows)?;
    let (tv, stderr) = super::compare_posteriors_discrete(&counts, &truth, 200, key.child(300))?;
    let mut stats =
        vec![StatEntry::checked("tv_vs_true_posterior", tv, 0.1, tv < 0.1).with_stderr(stderr)];
    for (k, c) in counts.iter().enumerate() {
        stats.push(StatEntry::info(
            format!("signal{k}_frequency"),
            *c as f64 / n as f64,
        ));
    }
    let meta = serde_json::json!({ "counts": counts, "true_posterior": truth });
    std::fs::write(
        out.join("discrete_eval.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| HarnessError::Json(e.to_string()))?,
    )
    .map_err(|e| HarnessError::File(out.into(), e))?;
    Ok((report.losses, stats))
}

/// Mean color of a `[W, 3]` observation.
fn mean_color(obs: &Tensor) -> [f64; 3] {
    let w = obs.shape()[0] as f64;
    let mut acc = [0.0; 3];
    for px in obs.data().chunks_exact(3) {
        for ch in 0..3 {
            acc[ch] += px[ch];
        }
    }
    acc.map(|v| v / w)
}

fn color_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max)
}

fn toy_render(
    cfg: &ExperimentConfig,
    key: RngKey,
    out: &Path,
) -> Result<(Vec<f64>, Vec<StatEntry>)> {
    let fm = RenderModel::new(4, 2, 4, 8)?.with_feature_channels(cfg.net.feature_channels);
    let world = BimodalSceneWorld::new(fm.clone());
    let sched = cfg.schedule.build()?;
    let tuples = generate_tuples(
        &world,
        cfg.dataset_size,
        false,
        &PoseRoles::Random,
        key.child(0),
    )?;
    io::write_dataset(&out.join("dataset.bin"), &tuples, cfg.seed)?;

    let mut model = RenderConditioner::new(key.child(1), &fm, sched.t_max(), &cfg.net);
    let report = train(&mut model, &fm, &tuples, &sched, &cfg.train, key.child(2), None)?;
    save_params(&out.join("params"), &Conditioner::params(&model))?;

    // deterministic baseline: context-only regression of the scene
    let mut det = DeterministicEstimator::for_model(key.child(3), &fm, &cfg.net);
    train_deterministic(&mut det, &fm, &tuples, &cfg.train, key.child(4), None)?;

    let front = world.front_pose();
    let back = world.back_pose();
    let o_ctxt = fm.apply(world.scene(0).grid(), &front)?;
    let ctxts = vec![(o_ctxt.clone(), front)];
    let mode_means = [
        mean_color(&world.mode_render(0)),
        mean_color(&world.mode_render(1)),
    ];
    write_obs_ppm(out, "context_view.ppm", &o_ctxt)?;
    write_obs_ppm(out, "mode0_back_view.ppm", &world.mode_render(0))?;
    write_obs_ppm(out, "mode1_back_view.ppm", &world.mode_render(1))?;

    let n = cfg.sampler.eval_samples;
    let mut mode_counts = [0usize; 2];
    let mut within = 0usize;
    for s in 0..n {
        let r = sample(
            &model,
            &fm,
            &ctxts,
            &back,
            &sched,
            cfg.sampler.step_variant,
            key.child(100).child(s as u64),
        )?;
        let mc = mean_color(&r.observation);
        let d = [color_dist(&mc, &mode_means[0]), color_dist(&mc, &mode_means[1])];
        let nearest = usize::from(d[1] < d[0]);
        mode_counts[nearest] += 1;
        if d[nearest] < 0.15 {
            within += 1;
        }
        if s < 8 {
            write_obs_ppm(out, &format!("sample{s}_back_view.ppm"), &r.observation)?;
        }
    }
    let det_scene = det.estimate(det.params(), &fm, &ctxts, &back)?;
    let det_view = fm.apply(&det_scene, &back)?;
    write_obs_ppm(out, "deterministic_back_view.ppm", &det_view)?;
    let det_mc = mean_color(&det_view);
    let mode_avg = [
        (mode_means[0][0] + mode_means[1][0]) / 2.0,
        (mode_means[0][1] + mode_means[1][1]) / 2.0,
        (mode_means[0][2] + mode_means[1][2]) / 2.0,
    ];
    let det_dist = color_dist(&det_mc, &mode_avg);

    let f0 = mode_counts[0] as f64 / n as f64;
    let f1 = mode_counts[1] as f64 / n as f64;
    let frac_within = within as f64 / n as f64;
    let mut stats = vec![
        StatEntry::checked("mode0_frequency", f0, 0.7, (0.3..=0.7).contains(&f0)),
        StatEntry::checked("mode1_frequency", f1, 0.7, (0.3..=0.7).contains(&f1)),
        StatEntry::checked("fraction_within_mode", frac_within, 0.9, frac_within >= 0.9),
        StatEntry::checked(
            "deterministic_dist_to_mode_average",
            det_dist,
            0.15,
            det_dist < 0.15,
        ),
    ];

    // autoregressive rollout: report cross-render disagreement
    if cfg.sampler.autoregressive_depth >= 2 {
        let poses: Vec<_> = (0..cfg.sampler.autoregressive_depth)
            .map(|i| if i % 2 == 0 { back } else { front })
            .collect();
        let rollout = sample_autoregressive(
            &model,
            &fm,
            &o_ctxt,
            &front,
            &poses,
            &sched,
            cfg.sampler.step_variant,
            key.child(500),
        )?;
        let cross = fm.apply(&rollout[0].signal, &poses[1])?;
        let mad = cross
            .sub(&rollout[1].observation)?
            .data()
            .iter()
            .map(|v| v.abs())
            .sum::<f64>()
            / cross.numel() as f64;
        stats.push(StatEntry::info("autoregressive_cross_render_mad", mad));
    }
    Ok((report.losses, stats))
}

fn motion_warp(
    cfg: &ExperimentConfig,
    key: RngKey,
    out: &Path,
) -> Result<(Vec<f64>, Vec<StatEntry>)> {
    let width = 8;
    let world = BimodalMotionWorld::new(width);
    let fm = world.forward_model().clone();
    let sched = cfg.schedule.build()?;
    // context is always the static frame (phi = 0), target the moved frame
    let roles = PoseRoles::Fixed {
        ctxt: vec![0],
        trgt: vec![1],
        novel: vec![],
    };
    let tuples = generate_tuples(&world, cfg.dataset_size, false, &roles, key.child(0))?;
    io::write_dataset(&out.join("dataset.bin"), &tuples, cfg.seed)?;

    let smooth = cfg.train.motion_smoothness;
    let reg = move |signal: &Tensor| -> crate::tensor::Result<Tensor> {
        let w = signal.shape()[0];
        let hi = signal.slice(&[1, 3], &[w - 1, 1])?;
        let lo = signal.slice(&[0, 3], &[w - 1, 1])?;
        hi.sub(&lo)?.square()?.sum()?.scale(smooth)
    };
    let reg_opt: Option<crate::diffusion::SignalRegularizer> =
        (smooth > 0.0).then_some(&reg as crate::diffusion::SignalRegularizer);

    let mut model = PlainConditioner::new(key.child(1), &fm, sched.t_max(), &cfg.net);
    let report = train(&mut model, &fm, &tuples, &sched, &cfg.train, key.child(2), reg_opt)?;
    save_params(&out.join("params"), &model.net_params())?;

    let mut det = DeterministicEstimator::for_model(key.child(3), &fm, &cfg.net);
    train_deterministic(&mut det, &fm, &tuples, &cfg.train, key.child(4), reg_opt)?;

    // held-out evaluation scene (its colors are the conditioning context)
    let mut eval_rng = key.child(5).rng();
    let eval_signal = world.sample_signal(&mut eval_rng);
    let o_ctxt = fm.apply(&eval_signal, &0.0)?;
    let ctxts = vec![(o_ctxt.clone(), 0.0)];
    write_obs_ppm(out, "context_frame.ppm", &o_ctxt)?;
    write_obs_ppm(out, "target_frame.ppm", &fm.apply(&eval_signal, &1.0)?)?;

    // zero-motion identity: exact equality of warp(S_m = 0) and the colors
    let zero_motion = MotionSignal {
        color: o_ctxt.clone(),
        motion: Tensor::zeros(&[width, 1]),
    };
    let identity_exact = fm.warp(&zero_motion, 1.0)?.bit_eq(&o_ctxt);

    let det_signal = det.estimate(det.params(), &fm, &ctxts, &1.0)?;
    let det_motion = MotionSignal::from_signal(&det_signal)?.motion;
    let det_mean_abs =
        det_motion.data().iter().map(|v| v.abs()).sum::<f64>() / width as f64;
    let det_max_abs = det_motion.data().iter().map(|v| v.abs()).fold(0.0, f64::max);

    let n = cfg.sampler.eval_samples;
    let modes = world.mode_motions();
    let mut near_mode = 0usize;
    let mut mode_counts = [0usize; 2];
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        let r = sample(
            &model,
            &fm,
            &ctxts,
            &1.0,
            &sched,
            cfg.sampler.step_variant,
            key.child(100).child(s as u64),
        )?;
        let motion = MotionSignal::from_signal(&r.signal)?.motion;
        let mean: f64 = motion.data().iter().sum::<f64>() / width as f64;
        rows.push(vec![mean]);
        let d = [
            (mean - modes[0]).abs(),
            (mean - modes[1]).abs(),
        ];
        let nearest = usize::from(d[1] < d[0]);
        if d[nearest] < 0.2 {
            near_mode += 1;
            mode_counts[nearest] += 1;
        }
    }
    io::write_csv(&out.join("sample_mean_motion.csv"), "mean_motion", &rows)?;
    let frac = near_mode as f64 / n as f64;
    let stats = vec![
        StatEntry::checked(
            "zero_motion_identity_exact",
            if identity_exact { 1.0 } else { 0.0 },
            1.0,
            identity_exact,
        ),
        StatEntry::checked(
            "deterministic_motion_mean_abs",
            det_mean_abs,
            0.1,
            det_mean_abs < 0.1,
        ),
        StatEntry::info("deterministic_motion_max_abs", det_max_abs),
        StatEntry::checked("fraction_near_motion_mode", frac, 0.8, frac >= 0.8),
        StatEntry::info(
            "mode_plus_frequency",
            mode_counts[0] as f64 / n as f64,
        ),
        StatEntry::info(
            "mode_minus_frequency",
            mode_counts[1] as f64 / n as f64,
        ),
    ];
    Ok((report.losses, stats))
}

fn generator_inversion(
    cfg: &ExperimentConfig,
    key: RngKey,
    out: &Path,
) -> Result<(Vec<f64>, Vec<StatEntry>)> {
    let fm = GeneratorModel::seeded(key.child(0), 16, 32, 8, 8, 4, 4)?;
    let world = LatentPatchWorld::new(fm.clone());
    let sched = cfg.schedule.build()?;
    let tuples = generate_tuples(
        &world,
        cfg.dataset_size,
        true,
        &PoseRoles::Random,
        key.child(1),
    )?;
    io::write_dataset(&out.join("dataset.bin"), &tuples, cfg.seed)?;

    let mut model = PlainConditioner::new(key.child(2), &fm, sched.t_max(), &cfg.net);
    let report = train(&mut model, &fm, &tuples, &sched, &cfg.train, key.child(3), None)?;
    save_params(&out.join("params"), &model.net_params())?;

    let mut det = DeterministicEstimator::for_model(key.child(4), &fm, &cfg.net);
    train_deterministic(&mut det, &fm, &tuples, &cfg.train, key.child(5), None)?;

    // held-out latent and its context patch
    let mut eval_rng = key.child(6).rng();
    let w_true = world.sample_signal(&mut eval_rng);
    let poses = world.poses();
    let o_ctxt = fm.apply(&w_true, &poses[0])?;
    let ctxts = vec![(o_ctxt.clone(), poses[0])];
    write_image_ppm(out, "true_full_image.ppm", &fm.full_image(&w_true)?)?;

    let n = cfg.sampler.eval_samples;
    let mut recon = 0.0;
    let mut latents: Vec<Tensor> = Vec::with_capacity(n);
    for s in 0..n {
        let r = sample(
            &model,
            &fm,
            &ctxts,
            &poses[3],
            &sched,
            cfg.sampler.step_variant,
            key.child(100).child(s as u64),
        )?;
        recon += fm.apply(&r.signal, &poses[0])?.squared_error(&o_ctxt)?.item();
        if s < 8 {
            write_image_ppm(
                out,
                &format!("sample{s}_full_image.ppm"),
                &fm.full_image(&r.signal)?,
            )?;
        }
        latents.push(r.signal);
    }
    recon /= n as f64;
    // pairwise latent spread as the diversity statistic
    let mut spread = 0.0;
    let mut pairs = 0usize;
    for i in 0..latents.len().min(32) {
        for j in i + 1..latents.len().min(32) {
            spread += latents[i]
                .sub(&latents[j])?
                .data()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            pairs += 1;
        }
    }
    if pairs > 0 {
        spread /= pairs as f64;
    }

    let det_w = det.estimate(det.params(), &fm, &ctxts, &poses[3])?;
    let det_recon = fm.apply(&det_w, &poses[0])?.squared_error(&o_ctxt)?.item();
    write_image_ppm(out, "deterministic_full_image.ppm", &fm.full_image(&det_w.detach())?)?;

    let stats = vec![
        StatEntry::info("mean_context_patch_recon_error", recon),
        StatEntry::info("deterministic_context_patch_recon_error", det_recon),
        StatEntry::info("latent_sample_pairwise_spread", spread),
    ];
    Ok((report.losses, stats))
}

/// The measure-theory property suite (no training). Also used directly by
/// the `verify-measures` subcommand.
pub fn measure_suite_stats(key: RngKey) -> Result<Vec<StatEntry>> {
    let mut stats = Vec::new();

    // pushforward of a normal through the embedding x -> (x, 0) concentrates
    // on the line exactly
    let mut rng = key.child(0).rng();
    let mu = EmpiricalMeasure::new(Tensor::randn(&[4096, 1], &mut rng))?;
    let embedded = pushforward(&mu, |x| vec![x[0], 0.0])?;
    let max_second = (0..embedded.len())
        .map(|i| embedded.row(i)[1].abs())
        .fold(0.0, f64::max);
    stats.push(StatEntry::checked(
        "embedding_max_abs_off_line",
        max_second,
        0.0,
        max_second == 0.0,
    ));

    // cube-map pushforward: histogram against the analytic density, chi-square
    // at 1% over 20 bins, excluding the two half-bins around the singularity
    let mut rng = key.child(1).rng();
    use rand::Rng;
    let n_cube = 20_000;
    let uniform: Vec<f64> = (0..n_cube).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mu = EmpiricalMeasure::from_scalars(&uniform)?;
    let cubed = pushforward(&mu, |x| vec![x[0].powi(3)])?;
    let values = cubed.column(0);
    let bins = 20;
    let counts = histogram_counts(&values, -1.0, 1.0, bins);
    // P([a,b]) = (b^(1/3) - a^(1/3)) / 2 for 0 <= a < b, mirrored for negatives
    let cdf_abs = |x: f64| x.abs().cbrt() / 2.0;
    let mut kept_counts = Vec::new();
    let mut kept_probs = Vec::new();
    for b in 0..bins {
        if b == bins / 2 - 1 || b == bins / 2 {
            continue; // central region around the density blow-up
        }
        let lo = -1.0 + 2.0 * b as f64 / bins as f64;
        let hi = lo + 2.0 / bins as f64;
        let p = if hi <= 0.0 {
            cdf_abs(lo) - cdf_abs(hi)
        } else {
            cdf_abs(hi) - cdf_abs(lo)
        };
        kept_counts.push(counts[b]);
        kept_probs.push(p);
    }
    let total_p: f64 = kept_probs.iter().sum();
    let probs: Vec<f64> = kept_probs.iter().map(|p| p / total_p).collect();
    let kept_n: u64 = kept_counts.iter().sum();
    let scaled: Vec<u64> = kept_counts;
    let chi = chi_square_gof(&scaled, &probs, 0.01)?;
    let _ = kept_n;
    stats.push(StatEntry::checked(
        "cube_pushforward_chi_square",
        chi.statistic,
        chi.critical,
        chi.passes(),
    ));

    // left-inverse recovery
    let mut rng = key.child(2).rng();
    let mu = EmpiricalMeasure::new(Tensor::randn(&[1024, 1], &mut rng))?;
    let emb = verify_left_inverse(&mu, |x| vec![x[0], 0.0], |y| vec![y[0]], 0.0)?;
    stats.push(StatEntry::checked(
        "left_inverse_embedding_distance",
        emb.distance,
        0.0,
        emb.distance == 0.0,
    ));
    let ident = verify_left_inverse(&mu, |x| x.to_vec(), |y| y.to_vec(), 0.0)?;
    stats.push(StatEntry::checked(
        "left_inverse_identity_distance",
        ident.distance,
        0.0,
        ident.distance == 0.0,
    ));
    let cube = verify_left_inverse(&mu, |x| vec![x[0].powi(3)], |y| vec![y[0].cbrt()], 1e-12)?;
    stats.push(StatEntry::checked(
        "left_inverse_cube_max_err",
        cube.max_roundtrip_error,
        1e-12,
        cube.max_roundtrip_error <= 1e-12,
    ));

    // slice identity on rendered total observations, with the local error
    // between a denoised and a true total image as the integrand
    let grid = TotalGrid {
        poses: 4,
        pixels: 4,
        channels: 3,
    };
    let fm = RenderModel::new(3, 3, grid.pixels, 6)?;
    let angles = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI, 1.5 * std::f64::consts::PI];
    let total_of_scene = |scene: &Tensor| -> Result<Vec<f64>> {
        let mut flat = Vec::with_capacity(grid.flat_len());
        for a in angles {
            let img = fm.apply(scene, &crate::forward_models::CameraPose::new(a, 0.0))?;
            flat.extend_from_slice(img.data());
        }
        Ok(flat)
    };
    let mut rng = key.child(3).rng();
    let mut rows = Vec::new();
    for _ in 0..12 {
        rows.push(total_of_scene(&Tensor::randn(&[3, 3, 4], &mut rng))?);
    }
    let truth = total_of_scene(&Tensor::randn(&[3, 3, 4], &mut rng))?;
    let mu_t = EmpiricalMeasure::from_rows(&rows)?;
    let g = move |pixel: usize, channel: usize, pose: usize, total: &[f64]| -> f64 {
        let idx = grid.index(pixel, channel, pose);
        (total[idx] - truth[idx]).powi(2)
    };
    let rep = slice_identity_check(&g, &mu_t, grid, 100_000, key.child(4))?;
    let gap_in_se = (rep.lhs - rep.rhs).abs() / rep.combined_stderr().max(1e-300);
    stats.push(StatEntry::checked(
        "slice_identity_gap_stderr_units",
        gap_in_se,
        3.0,
        rep.agrees(3.0),
    ));

    // change-of-variables densities integrate to 1
    let p = DensityFn::standard_normal_1d();
    let scaled_density = change_of_variables_density(&p, |y| vec![y[0] / 2.0], |_| 0.5);
    let grid_pts: Vec<f64> = (0..=12_000).map(|i| -30.0 + i as f64 * 0.005).collect();
    let z_gauss = trapezoid(&scaled_density, &grid_pts)?;
    stats.push(StatEntry::checked(
        "cov_gaussian_integral_error",
        (z_gauss - 1.0).abs(),
        1e-3,
        (z_gauss - 1.0).abs() < 1e-3,
    ));
    let uniform_density =
        DensityFn::normalized(|x: &[f64]| if x[0].abs() <= 1.0 { 0.5 } else { 0.0 });
    let cube_density = change_of_variables_density(
        &uniform_density,
        |y| vec![y[0].cbrt()],
        |y| y[0].abs().powf(-2.0 / 3.0) / 3.0,
    );
    // graded grid, geometric toward the integrable singularity at 0
    let mut pos = Vec::new();
    let mut x = 1e-12;
    while x < 1.0 {
        pos.push(x);
        x *= 1.005;
    }
    pos.push(1.0);
    let mut graded: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    graded.extend(pos.iter());
    let z_cube = trapezoid(&cube_density, &graded)?;
    stats.push(StatEntry::checked(
        "cov_cube_integral_error",
        (z_cube - 1.0).abs(),
        1e-3,
        (z_cube - 1.0).abs() < 1e-3,
    ));

    // two-sample sanity: same-distribution energy test accepts, and W1 of a
    // unit shift is the shift
    let mut rng = key.child(5).rng();
    let a = EmpiricalMeasure::new(Tensor::randn(&[10_000, 1], &mut rng))?;
    let b = EmpiricalMeasure::new(Tensor::randn(&[10_000, 1], &mut rng))?;
    let perm = energy_permutation_test(&a, &b, 200, 0.01, key.child(6))?;
    stats.push(StatEntry::checked(
        "energy_same_distribution_statistic",
        perm.statistic,
        perm.threshold,
        perm.accepts_null(),
    ));
    let shifted: Vec<f64> = b.column(0).iter().map(|v| v + 1.0).collect();
    let c = EmpiricalMeasure::from_scalars(&shifted)?;
    let w1 = two_sample_distance(&a, &c, DistanceKind::Wasserstein1)?;
    stats.push(StatEntry::checked(
        "w1_unit_shift_error",
        (w1 - 1.0).abs(),
        0.05,
        (w1 - 1.0).abs() < 0.05,
    ));

    Ok(stats)
}

/// Write a `[W, 3]` observation as a one-row PPM.
fn write_obs_ppm(out: &Path, name: &str, obs: &Tensor) -> Result<()> {
    let w = obs.shape()[0];
    io::write_ppm(&out.join(name), 1, w, obs.data())?;
    Ok(())
}

/// Write an `[H, W, 3]` raw image as PPM, affinely squashed for display.
fn write_image_ppm(out: &Path, name: &str, img: &Tensor) -> Result<()> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let data: Vec<f64> = img.data().iter().map(|v| 0.5 + 0.25 * v).collect();
    io::write_ppm(&out.join(name), h, w, &data)?;
    Ok(())
}
