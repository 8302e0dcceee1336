//! The re-noising constants are chosen to match the total noise added by the
//! forward process: re-noising a clean value to level t and noising it with
//! the forward marginal at t are the same distribution. This demo checks that
//! with an energy-distance permutation test at several steps.
//!
//!     cargo run --release --example schedule_matching

use sigdiff::measures::{energy_permutation_test, EmpiricalMeasure};
use sigdiff::rng::RngKey;
use sigdiff::schedule::{q_sample, renoise, VarianceSchedule};
use sigdiff::tensor::Tensor;

fn main() {
    let sched = VarianceSchedule::linear(64, 0.01, 0.15).unwrap();
    let x0 = Tensor::from_vec(vec![1], vec![0.7]).unwrap();
    let n = 10_000;
    let key = RngKey::new(42);

    for (i, t) in [1usize, 32, 63].into_iter().enumerate() {
        let mut rng = key.child(i as u64).rng();
        let mut via_q = Vec::with_capacity(n);
        let mut via_renoise = Vec::with_capacity(n);
        for _ in 0..n {
            let noise = Tensor::randn(&[1], &mut rng);
            via_q.push(q_sample(&x0, t, &noise, &sched).unwrap().item());
            let noise = Tensor::randn(&[1], &mut rng);
            via_renoise.push(renoise(&x0, t, &noise, &sched).unwrap().item());
        }
        let a = EmpiricalMeasure::from_scalars(&via_q).unwrap();
        let b = EmpiricalMeasure::from_scalars(&via_renoise).unwrap();
        let rep = energy_permutation_test(&a, &b, 200, 0.01, key.child(100 + i as u64)).unwrap();
        println!(
            "t = {t:>2}: energy = {:.3e}, permutation threshold (1%) = {:.3e} -> {}",
            rep.statistic,
            rep.threshold,
            if rep.accepts_null() {
                "indistinguishable"
            } else {
                "REJECTED"
            }
        );
    }
}
