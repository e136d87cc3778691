//! Selection, inference and full-path latency on a two-slot bank.
//!
//! cargo run --release --example runtime_breakdown

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotpath::harness::{bench_breakdown, PayloadSource};
use slotpath::{ModelBank, ModelDims, ModelWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bank = ModelBank::from_models((0..2).map(|_| ModelWeights::random(ModelDims::H32, &mut rng)).collect())?;
    let r = bench_breakdown(&bank, 100_000, &PayloadSource::Seeded(1))?;
    println!("packets            {}", r.n_packets);
    println!(
        "select mean        {:.2} ns (p99 {:.2})",
        r.select.mean_ns, r.select.p99_ns
    );
    println!(
        "infer mean         {:.1} ns (p99 {:.1})",
        r.infer.mean_ns, r.infer.p99_ns
    );
    println!("end to end mean    {:.1} ns", r.full.mean_ns);
    println!("select / infer     {:.4}%", 100.0 * r.select_to_infer_ratio);
    println!("throughput         {:.0} packets/s", r.packets_per_second);
    Ok(())
}
