//! Replay a paced trace that switches from slot 0 to slot 1 halfway and
//! check every verdict against an offline oracle.
//!
//! cargo run --release --example continuity_replay

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotpath::harness::{gen_boundary_trace, run_continuity, ContinuityConfig, PayloadSource, DEFAULT_PACING_NS};
use slotpath::{ModelBank, ModelDims, ModelWeights};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bank = ModelBank::from_models((0..2).map(|_| ModelWeights::random(ModelDims::H32, &mut rng)).collect())?;
    let trace = gen_boundary_trace(8192, 4096, &PayloadSource::Seeded(9), DEFAULT_PACING_NS)?;
    let r = run_continuity(&bank, &trace, &ContinuityConfig::default())?;
    println!(
        "offered {} processed {} ({:.1}%)",
        r.offered,
        r.processed,
        100.0 * r.processed_fraction
    );
    println!(
        "boundary at record {}, slot-1 packets processed {}",
        r.boundary_index, r.post_boundary_processed
    );
    println!(
        "wrong slot hits {}, wrong verdicts {}",
        r.wrong_slot_hits, r.wrong_verdicts
    );
    println!(
        "egress gap: median {:.2} us, across the boundary {:.2} us",
        r.median_gap_ns / 1e3,
        r.boundary_gap_ns / 1e3
    );
    println!(
        "rate before {:.1} kpps, after {:.1} kpps",
        r.rate_before_kpps, r.rate_after_kpps
    );
    Ok(())
}
