use serde::Serialize;

use super::{HarnessError, PayloadSource};
use crate::bank::ModelBank;
use crate::bnn::{infer_reference, ModelWeights};
use crate::frame::{build_frame, FrameParser, Reg0Metadata};
use crate::pipeline::{
    decide_action, run_pipeline, NullSink, PacedSource, PacketRecord, PacketSink, Reason, ReasonCounts, RunOptions,
    RunReport, Verdict,
};
use crate::stats::median;
use crate::trace::TraceRecord;

/// Emission spacing of generated boundary traces.
pub const DEFAULT_PACING_NS: u64 = 10_000;

/// Records `0..boundary` address slot 0, the rest slot 1, spaced `pacing_ns` apart.
pub fn gen_boundary_trace(
    n_packets: usize,
    boundary: usize,
    payloads: &PayloadSource,
    pacing_ns: u64,
) -> Result<Vec<TraceRecord>, HarnessError> {
    if boundary == 0 || boundary >= n_packets {
        return Err(HarnessError::BadBoundary { n_packets, boundary });
    }
    Ok(payloads
        .take(n_packets)
        .iter()
        .enumerate()
        .map(|(i, p)| TraceRecord {
            emit_time_ns: i as u64 * pacing_ns,
            frame: build_frame(u32::from(i >= boundary), p, [0; 8]).expect("payload length is fixed"),
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityConfig {
    /// Honour trace emit times.
    pub paced: bool,
    /// Leading packets left out of gap and latency statistics; never out of correctness counts.
    pub warmup: u64,
    /// Packets per rate window on each side of the boundary.
    pub window: usize,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        ContinuityConfig {
            paced: true,
            warmup: 64,
            window: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub offered: u64,
    /// Packets that completed inference.
    pub processed: u64,
    pub processed_fraction: f64,
    pub wrong_slot_hits: u64,
    pub wrong_verdicts: u64,
    pub reasons: ReasonCounts,
    pub boundary_index: usize,
    pub post_boundary_offered: u64,
    pub post_boundary_processed: u64,
    /// Configured spacing, from the first two trace records.
    pub pacing_ns: Option<u64>,
    pub median_gap_ns: f64,
    /// Egress gap between the last pre-boundary and the first post-boundary packet.
    pub boundary_gap_ns: f64,
    pub rate_before_kpps: f64,
    pub rate_after_kpps: f64,
    pub warmup_excluded: u64,
    pub pipeline: RunReport,
}

/// First record that addresses a valid slot other than the first record's.
///
/// Ids outside the bank are skipped, so a corrupted id cannot pose as the boundary.
pub fn find_boundary(trace: &[TraceRecord], slots: usize) -> Option<usize> {
    let first = trace.first()?.frame.slot_id();
    trace
        .iter()
        .position(|r| (r.frame.slot_id() as usize) < slots && r.frame.slot_id() != first)
}

/// Verdict the intended model gives each record; `None` where the frame never reaches inference.
pub(crate) fn oracle_verdicts(trace: &[TraceRecord], models: &[&ModelWeights]) -> Vec<Option<Verdict>> {
    let parser = FrameParser::default();
    trace
        .iter()
        .map(|r| {
            let (meta, payload) = parser.parse(r.frame.as_ref()).ok()?;
            let model = models.get(meta.slot_id as usize)?;
            let score = infer_reference(model, payload.as_ref()).ok()?;
            Some(decide_action(&meta, score).verdict)
        })
        .collect()
}

pub(crate) fn replay(
    bank: &ModelBank,
    trace: &[TraceRecord],
    cfg: &ContinuityConfig,
    sink: &mut dyn PacketSink,
) -> Result<RunReport, HarnessError> {
    let mut source = PacedSource::new(trace.to_vec(), cfg.paced);
    Ok(run_pipeline(
        bank,
        &mut source,
        sink,
        &RunOptions {
            limit: None,
            warmup: cfg.warmup,
        },
    )?)
}

fn actual_verdict(r: &PacketRecord) -> Option<Verdict> {
    (r.action.reason == Reason::Inference).then_some(r.action.verdict)
}

pub(crate) fn count_wrong_verdicts(records: &[PacketRecord], expected: &[Option<Verdict>], from: usize) -> u64 {
    records
        .iter()
        .zip(expected)
        .skip(from)
        .filter(|(r, e)| actual_verdict(r) != **e)
        .count() as u64
}

fn window_rate_kpps(records: &[PacketRecord]) -> f64 {
    match (records.first(), records.last()) {
        (Some(a), Some(b)) if records.len() > 1 && b.times.egress > a.times.egress => {
            (records.len() - 1) as f64 * 1e6 / (b.times.egress - a.times.egress) as f64
        }
        _ => 0.0,
    }
}

pub(crate) fn analyse(
    trace: &[TraceRecord],
    report: RunReport,
    expected: &[Option<Verdict>],
    boundary: usize,
    cfg: &ContinuityConfig,
) -> ContinuityReport {
    let records = &report.records;
    let wrong_slot_hits = records
        .iter()
        .filter(|r| r.action.reason == Reason::Inference)
        .filter(|r| r.slot_used.map(|k| k.0 as u32) != r.slot_id)
        .count() as u64;
    let wrong_verdicts = count_wrong_verdicts(records, expected, 0);

    // gap i spans records i-1 and i
    let gaps: Vec<f64> = records
        .windows(2)
        .map(|w| w[1].times.egress.saturating_sub(w[0].times.egress) as f64)
        .collect();
    let steady: Vec<f64> = gaps.iter().skip(cfg.warmup as usize).copied().collect();
    let median_gap_ns = median(if steady.is_empty() { &gaps } else { &steady });
    let boundary_gap_ns = if boundary >= 1 && boundary < records.len() {
        gaps[boundary - 1]
    } else {
        0.0
    };

    let b = boundary.min(records.len());
    let before = &records[b.saturating_sub(cfg.window)..b];
    let after = &records[b..(b + cfg.window).min(records.len())];
    let post = &records[b..];

    let offered = trace.len() as u64;
    ContinuityReport {
        offered,
        processed: report.processed,
        processed_fraction: if offered == 0 {
            0.0
        } else {
            report.processed as f64 / offered as f64
        },
        wrong_slot_hits,
        wrong_verdicts,
        reasons: report.reasons,
        boundary_index: boundary,
        post_boundary_offered: (trace.len() - boundary.min(trace.len())) as u64,
        post_boundary_processed: post.iter().filter(|r| r.action.reason == Reason::Inference).count() as u64,
        pacing_ns: (trace.len() > 1).then(|| trace[1].emit_time_ns - trace[0].emit_time_ns),
        median_gap_ns,
        boundary_gap_ns,
        rate_before_kpps: window_rate_kpps(before),
        rate_after_kpps: window_rate_kpps(after),
        warmup_excluded: report.warmup_excluded,
        pipeline: report,
    }
}

/// Replays a boundary trace through the shared path and checks every
/// record against the intended slot and an oracle pre-pass.
pub fn run_continuity(
    bank: &ModelBank,
    trace: &[TraceRecord],
    cfg: &ContinuityConfig,
) -> Result<ContinuityReport, HarnessError> {
    let boundary = find_boundary(trace, bank.len()).ok_or(HarnessError::NoBoundary)?;
    let snapshots: Vec<_> = (0..bank.len())
        .map(|k| bank.snapshot(crate::bank::SlotIndex(k)))
        .collect();
    let models: Vec<&ModelWeights> = snapshots.iter().map(|r| &r.model).collect();
    let expected = oracle_verdicts(trace, &models);
    let report = replay(bank, trace, cfg, &mut NullSink::default())?;
    Ok(analyse(trace, report, &expected, boundary, cfg))
}

/// Slot id carried by each record.
pub fn slot_ids(trace: &[TraceRecord]) -> Vec<u32> {
    trace
        .iter()
        .map(|r| Reg0Metadata::decode(r.frame.as_bytes()[..64].try_into().unwrap()).slot_id)
        .collect()
}
