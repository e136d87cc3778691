//! Push the slot-1 model over a loopback control connection only when the
//! first slot-1 packet shows up, and compare with having it resident.
//!
//! cargo run --release --example control_plane_compare

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotpath::harness::{gen_boundary_trace, run_control_compare, ControlConfig, PayloadSource};
use slotpath::{ModelDims, ModelWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let slot0 = ModelWeights::random(ModelDims::H32, &mut rng);
    let slot1 = ModelWeights::random(ModelDims::H32, &mut rng);
    let trace = gen_boundary_trace(1024, 512, &PayloadSource::Seeded(1), 200_000)?;
    let cfg = ControlConfig {
        transfer_latency_us: 10_000.0,
        ..Default::default()
    };
    let r = run_control_compare(&slot0, &slot1, &trace, &cfg)?;
    println!("weights sent            {} bytes", r.weight_bytes);
    println!(
        "switch latency          {:.1} us",
        r.switch_latency_us.unwrap_or(f64::NAN)
    );
    println!(
        "boundary to effective   {:.1} us",
        r.boundary_to_effective_us.unwrap_or(f64::NAN)
    );
    println!(
        "stale-model packets     {} (predicted {:?})",
        r.post_boundary_wrong_model, r.predicted_wrong_model
    );
    println!("wrong verdicts          {}", r.post_boundary_wrong_verdicts);
    println!(
        "resident switch         {:.4} us, wrong packets {}",
        r.resident_switch_latency_us, r.resident_wrong_packets
    );
    println!("latency ratio           {:.0}x", r.latency_ratio.unwrap_or(f64::NAN));
    Ok(())
}
