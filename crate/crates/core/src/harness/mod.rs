//! Scripted experiments: runtime breakdown, resident-bank scaling,
//! switching continuity and control-plane replacement.

mod bench;
mod continuity;
mod control;
mod pattern;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use bench::{
    bench_breakdown, bench_scaling, measure_select_ns, BreakdownReport, ScalingComparison, ScalingConfig,
    ScalingReport, ScalingRow, SCALING_TOLERANCE,
};
pub use continuity::{
    find_boundary, gen_boundary_trace, run_continuity, slot_ids, ContinuityConfig, ContinuityReport, DEFAULT_PACING_NS,
};
pub use control::{run_control_compare, ControlCompareReport, ControlConfig};
pub use pattern::{AccessPattern, DEFAULT_HOT_FRACTION};

use crate::bank::BankError;
use crate::bnn::ModelError;
use crate::frame::PAYLOAD_LEN;
use crate::pipeline::PipelineError;
use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("boundary index {boundary} must satisfy 0 < boundary < {n_packets}")]
    BadBoundary { n_packets: usize, boundary: usize },
    #[error("trace has no slot boundary")]
    NoBoundary,
    #[error("control channel failed: {0}")]
    ControlChannelFailure(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Where experiment payloads come from.
#[derive(Debug, Clone)]
pub enum PayloadSource {
    /// Independent uniformly random payloads from a seeded generator.
    Seeded(u64),
    /// A fixed pool, cycled in order.
    Pool(Vec<[u8; PAYLOAD_LEN]>),
}

impl PayloadSource {
    /// The first `n` payloads. An empty pool yields all-zero payloads.
    pub fn take(&self, n: usize) -> Vec<[u8; PAYLOAD_LEN]> {
        match self {
            PayloadSource::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n)
                    .map(|_| {
                        let mut p = [0u8; PAYLOAD_LEN];
                        rng.fill_bytes(&mut p);
                        p
                    })
                    .collect()
            }
            PayloadSource::Pool(pool) if pool.is_empty() => vec![[0u8; PAYLOAD_LEN]; n],
            PayloadSource::Pool(pool) => pool.iter().cycle().take(n).copied().collect(),
        }
    }
}
