//! The enumerable testbed: four signals, two poses, an ambiguous context
//! observation shared by two signals with unequal priors. The trained model's
//! sampled signal frequencies should match the exact Bayes posterior.
//!
//!     cargo run --release --example discrete_posterior

use sigdiff::harness::{run, ExperimentConfig, ExperimentKind};
use sigdiff::tensor::Tensor;
use sigdiff::testbeds::DiscreteWorld;

fn main() {
    let world = DiscreteWorld::four_corner([0.4, 0.3, 0.2, 0.1]).unwrap();
    let o = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
    let truth = world.true_posterior(&o, 0).unwrap();
    println!("true posterior given the ambiguous observation: {truth:?}\n");

    let mut cfg = ExperimentConfig::default_for(ExperimentKind::DiscreteProp1);
    cfg.seed = 5;
    cfg.train.steps = 6000;
    cfg.sampler.eval_samples = 2000;
    cfg.out_dir = Some(
        std::env::temp_dir()
            .join("sigdiff-discrete-demo")
            .display()
            .to_string(),
    );
    let report = run(&cfg).unwrap();
    for s in &report.statistics {
        match s.pass {
            Some(p) => println!(
                "{} {:<24} {:.4} (threshold {})",
                if p { "PASS" } else { "FAIL" },
                s.name,
                s.value,
                s.threshold.unwrap_or(f64::NAN)
            ),
            None => println!("     {:<24} {:.4}", s.name, s.value),
        }
    }
}
