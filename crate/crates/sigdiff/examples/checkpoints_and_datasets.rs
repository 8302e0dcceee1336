//! File formats: parameter checkpoints (flat f64 payload + JSON shape
//! manifest) and the binary dataset container (JSON header + f64 payload).
//!
//!     cargo run --release --example checkpoints_and_datasets

use sigdiff::denoiser::{load_params, save_params, NetConfig, PlainConditioner};
use sigdiff::io::{read_dataset, write_dataset};
use sigdiff::rng::RngKey;
use sigdiff::testbeds::{generate_tuples, DiscreteWorld, PoseRoles, SyntheticWorld};

fn main() {
    let dir = std::env::temp_dir().join("sigdiff-formats-demo");
    std::fs::create_dir_all(&dir).unwrap();

    let world = DiscreteWorld::four_corner([0.25; 4]).unwrap();
    let tuples = generate_tuples(&world, 16, false, &PoseRoles::Random, RngKey::new(1)).unwrap();
    let ds_path = dir.join("tuples.bin");
    write_dataset(&ds_path, &tuples, 1).unwrap();
    let (header, back) = read_dataset::<usize>(&ds_path).unwrap();
    println!(
        "dataset: {} tuples, obs shape {:?}, seed {} -> loaded {} tuples",
        header.count,
        header.obs_shape,
        header.seed,
        back.len()
    );

    let net = PlainConditioner::new(
        RngKey::new(2),
        world.forward_model(),
        16,
        &NetConfig::default(),
    );
    let params = net.net_params();
    let base = dir.join("checkpoint");
    save_params(&base, &params).unwrap();
    let loaded = load_params(&base).unwrap();
    let exact = loaded
        .iter()
        .zip(params.iter())
        .all(|(a, b)| a.bit_eq(b));
    println!(
        "checkpoint: {} tensors saved to {}.json/.bin, reload exact: {exact}",
        params.len(),
        base.display()
    );
}
