use std::io::Write;

use serde::Serialize;

use super::{PacketRecord, Reason, StageCounts, Verdict};
use crate::stats::LatencySummary;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReasonCounts {
    pub inference: u64,
    pub slot_out_of_range: u64,
    pub version_mismatch: u64,
    pub wrong_length: u64,
}

impl ReasonCounts {
    fn add(&mut self, reason: Reason) {
        match reason {
            Reason::Inference => self.inference += 1,
            Reason::SlotOutOfRange => self.slot_out_of_range += 1,
            Reason::VersionMismatch => self.version_mismatch += 1,
            Reason::WrongLength => self.wrong_length += 1,
        }
    }
}

/// Per-stage latency distributions, nanoseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageLatencies {
    pub parse: LatencySummary,
    pub resolve: LatencySummary,
    pub infer: LatencySummary,
    /// Action decision plus sink emit.
    pub act: LatencySummary,
    pub end_to_end: LatencySummary,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    pub offered: u64,
    /// Packets that completed inference.
    pub processed: u64,
    pub forwarded: u64,
    pub dropped: u64,
    pub reasons: ReasonCounts,
    /// Packets whose latencies were left out of `stages`.
    pub warmup_excluded: u64,
    pub stages: StageLatencies,
    pub clock_overhead_ns: f64,
    pub elapsed_ns: u64,
    pub packets_per_second: f64,
    pub stage_instances: StageCounts,
    pub incomplete: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub records: Vec<PacketRecord>,
}

impl RunReport {
    pub fn from_records(records: Vec<PacketRecord>, warmup: u64, elapsed_ns: u64, clock_overhead_ns: f64) -> Self {
        let mut reasons = ReasonCounts::default();
        let mut forwarded = 0;
        for r in &records {
            reasons.add(r.action.reason);
            if r.action.verdict == Verdict::Forward {
                forwarded += 1;
            }
        }
        let skip = (warmup as usize).min(records.len());
        let measured = &records[skip..];
        let inferred: Vec<&PacketRecord> = measured
            .iter()
            .filter(|r| r.action.reason == Reason::Inference)
            .collect();
        let span = |f: fn(&PacketRecord) -> u64| -> LatencySummary {
            LatencySummary::from_ns(&inferred.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        let stages = StageLatencies {
            parse: span(|r| r.times.parsed - r.times.ingress),
            resolve: span(|r| r.times.resolved - r.times.parsed),
            infer: span(|r| r.times.inferred - r.times.resolved),
            act: span(|r| r.times.egress - r.times.inferred),
            end_to_end: span(|r| r.times.egress - r.times.ingress),
        };
        let offered = records.len() as u64;
        RunReport {
            offered,
            processed: reasons.inference,
            forwarded,
            dropped: offered - forwarded,
            reasons,
            warmup_excluded: skip as u64,
            stages,
            clock_overhead_ns,
            elapsed_ns,
            packets_per_second: if elapsed_ns == 0 {
                0.0
            } else {
                offered as f64 * 1e9 / elapsed_ns as f64
            },
            stage_instances: StageCounts::default(),
            incomplete: false,
            error: None,
            records,
        }
    }
}

#[derive(Serialize)]
struct CsvRow {
    sequence_no: u64,
    slot_id: Option<u32>,
    slot_used: Option<usize>,
    score: Option<f64>,
    verdict: &'static str,
    reason: &'static str,
    model_version: Option<u64>,
    ingress_ns: u64,
    parsed_ns: u64,
    resolved_ns: u64,
    inferred_ns: u64,
    egress_ns: u64,
}

/// Per-packet dump, one row per record.
pub fn write_records_csv<W: Write>(records: &[PacketRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow {
            sequence_no: r.sequence_no,
            slot_id: r.slot_id,
            slot_used: r.slot_used.map(|k| k.0),
            score: r.score.map(|s| s.0),
            verdict: match r.action.verdict {
                Verdict::Forward => "forward",
                Verdict::Drop => "drop",
            },
            reason: match r.action.reason {
                Reason::Inference => "inference",
                Reason::SlotOutOfRange => "slot_out_of_range",
                Reason::VersionMismatch => "version_mismatch",
                Reason::WrongLength => "wrong_length",
            },
            model_version: r.model_version,
            ingress_ns: r.times.ingress,
            parsed_ns: r.times.parsed,
            resolved_ns: r.times.resolved,
            inferred_ns: r.times.inferred,
            egress_ns: r.times.egress,
        })?;
    }
    w.flush()?;
    Ok(())
}
