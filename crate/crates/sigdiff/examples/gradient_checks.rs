//! Check every primitive tensor operation and all three forward models
//! against central finite differences.
//!
//!     cargo run --release --example gradient_checks

use sigdiff::gradcheck::{check_forward_models, check_primitive_ops};
use sigdiff::rng::RngKey;

fn main() {
    let key = RngKey::new(0);
    let mut all = true;

    println!("primitive operations (rel. tol 1e-5, 10 random points each):");
    for rep in check_primitive_ops(key) {
        all &= rep.pass;
        println!("  {rep}");
    }

    println!("\nforward-model Jacobians vs finite differences:");
    for rep in check_forward_models(key.child(1), 10) {
        all &= rep.pass;
        println!("  {rep}");
    }

    println!("\n{}", if all { "all checks passed" } else { "FAILURES" });
    std::process::exit(if all { 0 } else { 1 });
}
