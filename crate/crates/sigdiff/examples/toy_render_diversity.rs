//! Conditional diversity through a renderer: the context camera sees an
//! opaque red wall; behind it the scene is green or blue with equal prior.
//! A deterministic regressor can only predict the blurred average, while
//! diffusion samples commit to one mode or the other. Writes PPM images of
//! the context view, the deterministic render, and sampled back views.
//!
//!     cargo run --release --example toy_render_diversity

use sigdiff::harness::{run, ExperimentConfig, ExperimentKind};

fn main() {
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::ToyRender);
    cfg.seed = 3;
    cfg.train.steps = 6000;
    cfg.sampler.eval_samples = 60;
    cfg.out_dir = Some(
        std::env::temp_dir()
            .join("sigdiff-render-demo")
            .display()
            .to_string(),
    );
    let report = run(&cfg).unwrap();
    println!(
        "images written to {} ({:.1}s)",
        cfg.out_dir.as_deref().unwrap(),
        report.wall_clock_seconds
    );
    for s in &report.statistics {
        match s.pass {
            Some(p) => println!(
                "{} {:<36} {:.4} (threshold {})",
                if p { "PASS" } else { "FAIL" },
                s.name,
                s.value,
                s.threshold.unwrap_or(f64::NAN)
            ),
            None => println!("     {:<36} {:.4}", s.name, s.value),
        }
    }
}
