//! Empirical-measure properties: pushforwards that concentrate on a line,
//! a density that blows up under a cube map, left-inverse recovery, the
//! slice identity, and change-of-variables normalization.
//!
//!     cargo run --release --example measure_suite

use sigdiff::harness::measure_suite_stats;
use sigdiff::rng::RngKey;

fn main() {
    let stats = measure_suite_stats(RngKey::new(0)).unwrap();
    let mut all = true;
    for s in &stats {
        let pass = s.pass.unwrap_or(true);
        all &= pass;
        println!(
            "{} {:<42} {:.6} (threshold {})",
            if pass { "PASS" } else { "FAIL" },
            s.name,
            s.value,
            s.threshold.unwrap_or(f64::NAN)
        );
    }
    std::process::exit(if all { 0 } else { 1 });
}
