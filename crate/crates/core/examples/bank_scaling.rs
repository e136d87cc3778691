//! Selection cost with 2 and 16 resident slots under four access patterns.
//!
//! cargo run --release --example bank_scaling

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotpath::harness::{bench_scaling, AccessPattern, ScalingConfig};
use slotpath::{ModelBank, ModelDims, ModelWeights};

fn bank(k: usize, rng: &mut ChaCha8Rng) -> ModelBank {
    ModelBank::from_models((0..k).map(|_| ModelWeights::random(ModelDims::H32, rng)).collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b2, b16) = (bank(2, &mut rng), bank(16, &mut rng));
    let cfg = ScalingConfig {
        n_packets: 50_000,
        infer_packets: 5_000,
        rounds: 5,
        ..Default::default()
    };
    let r = bench_scaling(&b2, &b16, &AccessPattern::standard(1), &cfg)?;
    for row in &r.rows {
        println!(
            "K={:<2} {:<24} select {:>6.2} ns  select+infer {:>8.1} ns  ids {:>2}",
            row.slots,
            row.pattern.to_string(),
            row.select_mean_ns,
            row.select_infer_mean_ns,
            row.ids_exercised
        );
    }
    for c in &r.comparisons {
        println!(
            "{:<12} K=16 vs K=2: {:+.1}%  within tolerance: {}",
            c.pattern,
            100.0 * c.relative_difference,
            c.within_tolerance
        );
    }
    println!("every slot resolved to its own model: {}", r.all_correct);
    Ok(())
}
