//! The shared forwarding path.
//!
//! One [`Pipeline`] owns one parser, one executor and one action policy.
//! Every packet runs the same sequence: parse reg0, resolve the slot,
//! infer with that slot's resident model, decide the action, emit. Only
//! the resolved slot differs between packets.

mod io;
mod report;

use std::cell::Cell;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

pub use io::{
    CollectSink, NullSink, PacedSource, PacketSink, PacketSource, RingSource, SinkError, TraceSink, UdpSink, UdpSource,
};
pub use report::{write_records_csv, ReasonCounts, RunReport, StageLatencies};

use crate::bank::{ModelBank, SlotIndex};
use crate::bnn::{infer_fast, ModelError, ModelWeights, Score};
use crate::frame::{FrameError, FrameParser, PayloadView, Reg0Metadata, INPUT_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Verdict {
    Forward,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Reason {
    Inference,
    SlotOutOfRange,
    VersionMismatch,
    WrongLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Action {
    pub verdict: Verdict,
    pub reason: Reason,
}

impl Action {
    fn drop_for(reason: Reason) -> Self {
        Action {
            verdict: Verdict::Drop,
            reason,
        }
    }
}

/// Default action policy: positive score is malicious and dropped.
/// Ties go to `Forward`. Metadata is available but unused.
pub fn decide_action(_meta: &Reg0Metadata, score: Score) -> Action {
    let verdict = if score.0 > 0.0 { Verdict::Drop } else { Verdict::Forward };
    Action {
        verdict,
        reason: Reason::Inference,
    }
}

/// Monotonic clock readings (ns since run start) at the five stage boundaries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageTimes {
    pub ingress: u64,
    pub parsed: u64,
    pub resolved: u64,
    pub inferred: u64,
    pub egress: u64,
}

impl StageTimes {
    pub fn is_ordered(&self) -> bool {
        self.ingress <= self.parsed
            && self.parsed <= self.resolved
            && self.resolved <= self.inferred
            && self.inferred <= self.egress
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketRecord {
    pub sequence_no: u64,
    pub slot_id: Option<u32>,
    pub slot_used: Option<SlotIndex>,
    pub score: Option<Score>,
    pub action: Action,
    /// Version tag of the resident parameters that produced `score`.
    pub model_version: Option<u64>,
    /// Number of pipeline stages this packet passed through (5 on the inference path).
    pub stages_run: u8,
    pub times: StageTimes,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("sink failed: {0}")]
    Sink(#[from] SinkError),
    #[error("bank shape does not match the frame payload: {0}")]
    Shape(#[from] ModelError),
}

#[derive(Debug, Clone, Copy)]
pub struct MonoClock {
    epoch: Instant,
}

impl MonoClock {
    pub fn new() -> Self {
        MonoClock { epoch: Instant::now() }
    }

    pub fn starting_at(epoch: Instant) -> Self {
        MonoClock { epoch }
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    #[inline]
    pub fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    /// Mean cost of one clock read.
    pub fn read_overhead_ns(&self) -> f64 {
        const READS: u64 = 1000;
        let start = self.now_ns();
        let mut last = start;
        for _ in 0..READS {
            last = std::hint::black_box(self.now_ns());
        }
        (last - start) as f64 / READS as f64
    }
}

impl Default for MonoClock {
    fn default() -> Self {
        Self::new()
    }
}

thread_local! {
    static CONSTRUCTED: Cell<StageCounts> = const { Cell::new(StageCounts { parsers: 0, executors: 0, policies: 0 }) };
}

/// Stage objects constructed on the current thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StageCounts {
    pub parsers: u64,
    pub executors: u64,
    pub policies: u64,
}

impl StageCounts {
    pub fn current() -> Self {
        CONSTRUCTED.with(|c| c.get())
    }

    pub fn since(self, earlier: StageCounts) -> StageCounts {
        StageCounts {
            parsers: self.parsers - earlier.parsers,
            executors: self.executors - earlier.executors,
            policies: self.policies - earlier.policies,
        }
    }
}

fn bump(f: impl FnOnce(&mut StageCounts)) {
    CONSTRUCTED.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

/// Runs the packed BNN on the resolved slot.
#[derive(Debug)]
pub struct Executor {
    _private: (),
}

impl Executor {
    fn new() -> Self {
        bump(|c| c.executors += 1);
        Executor { _private: () }
    }

    #[inline]
    pub fn execute(&self, model: &ModelWeights, payload: PayloadView<'_>) -> Result<Score, ModelError> {
        infer_fast(model, payload.as_ref())
    }
}

#[derive(Debug)]
pub struct ActionPolicy {
    _private: (),
}

impl ActionPolicy {
    fn new() -> Self {
        bump(|c| c.policies += 1);
        ActionPolicy { _private: () }
    }

    #[inline]
    pub fn decide(&self, meta: &Reg0Metadata, score: Score) -> Action {
        decide_action(meta, score)
    }
}

pub struct Pipeline {
    parser: FrameParser,
    executor: Executor,
    policy: ActionPolicy,
    clock: MonoClock,
}

impl Pipeline {
    pub fn new(parser: FrameParser, clock: MonoClock) -> Self {
        bump(|c| c.parsers += 1);
        Pipeline {
            parser,
            executor: Executor::new(),
            policy: ActionPolicy::new(),
            clock,
        }
    }

    pub fn clock(&self) -> &MonoClock {
        &self.clock
    }

    /// Runs one frame through the path and hands it to `sink`.
    ///
    /// Malformed frames and unknown slots become drops with their reason;
    /// only sink failures and a bank whose shape cannot accept a payload
    /// are returned as errors.
    pub fn process_packet(
        &self,
        bank: &ModelBank,
        sequence_no: u64,
        bytes: &[u8],
        sink: &mut dyn PacketSink,
    ) -> Result<PacketRecord, PipelineError> {
        let ingress = self.clock.now_ns();
        let mut rec = PacketRecord {
            sequence_no,
            slot_id: None,
            slot_used: None,
            score: None,
            action: Action::drop_for(Reason::WrongLength),
            model_version: None,
            stages_run: 1,
            times: StageTimes {
                ingress,
                ..Default::default()
            },
        };

        let parsed = self.parser.parse(bytes);
        rec.times.parsed = self.clock.now_ns();
        let (meta, payload) = match parsed {
            Ok(v) => v,
            Err(e) => {
                rec.action = Action::drop_for(match e {
                    FrameError::VersionMismatch { .. } => Reason::VersionMismatch,
                    _ => Reason::WrongLength,
                });
                return self.finish(rec, bytes, sink);
            }
        };
        rec.slot_id = Some(meta.slot_id);
        rec.stages_run = 2;

        let resolved = bank.resolve(&meta);
        rec.times.resolved = self.clock.now_ns();
        let k = match resolved {
            Ok(k) => k,
            Err(_) => {
                rec.action = Action::drop_for(Reason::SlotOutOfRange);
                return self.finish(rec, bytes, sink);
            }
        };
        rec.slot_used = Some(k);
        rec.stages_run = 3;

        let resident = bank.slot(k);
        let score = self.executor.execute(&resident.model, payload)?;
        rec.times.inferred = self.clock.now_ns();
        rec.score = Some(score);
        rec.model_version = Some(resident.version);
        drop(resident);

        rec.action = self.policy.decide(&meta, score);
        rec.stages_run = 5;
        self.finish(rec, bytes, sink)
    }

    fn finish(
        &self,
        mut rec: PacketRecord,
        bytes: &[u8],
        sink: &mut dyn PacketSink,
    ) -> Result<PacketRecord, PipelineError> {
        let t = &mut rec.times;
        t.resolved = t.resolved.max(t.parsed);
        t.inferred = t.inferred.max(t.resolved);
        sink.emit(bytes, &rec.action)?;
        rec.times.egress = self.clock.now_ns();
        Ok(rec)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunOptions {
    pub limit: Option<u64>,
    /// Leading packets excluded from latency statistics (never from counts).
    pub warmup: u64,
}

/// Pulls frames from `source` until exhaustion or `limit`.
///
/// A sink failure stops the run; the returned report is flagged
/// incomplete and carries the error.
pub fn run_pipeline(
    bank: &ModelBank,
    source: &mut dyn PacketSource,
    sink: &mut dyn PacketSink,
    options: &RunOptions,
) -> Result<RunReport, PipelineError> {
    if bank.dims().input_bits != INPUT_BITS {
        return Err(ModelError::DimensionMismatch {
            expected: INPUT_BITS,
            found: bank.dims().input_bits,
        }
        .into());
    }
    let clock = MonoClock::new();
    let overhead = clock.read_overhead_ns();
    let before = StageCounts::current();
    let pipeline = Pipeline::new(FrameParser::default(), clock);
    let mut buf = Vec::with_capacity(crate::frame::FRAME_LEN);
    let mut records = Vec::new();
    let mut failure = None;
    let start = clock.now_ns();
    let mut seq = 0u64;
    while options.limit.is_none_or(|l| seq < l) && source.recv(&mut buf) {
        match pipeline.process_packet(bank, seq, &buf, sink) {
            Ok(rec) => records.push(rec),
            Err(PipelineError::Sink(e)) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        seq += 1;
    }
    let elapsed = clock.now_ns() - start;
    let mut report = RunReport::from_records(records, options.warmup, elapsed, overhead);
    report.stage_instances = StageCounts::current().since(before);
    report.incomplete = failure.is_some();
    report.error = failure;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{infer_reference, ModelDims};
    use crate::frame::{build_frame, PacketFrame, PAYLOAD_LEN};
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bank(seed: u64, k: usize) -> ModelBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelBank::from_models((0..k).map(|_| ModelWeights::random(ModelDims::H32, &mut rng)).collect()).unwrap()
    }

    fn payload(seed: u64) -> [u8; PAYLOAD_LEN] {
        let mut p = [0u8; PAYLOAD_LEN];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut p);
        p
    }

    #[test]
    fn decide_threshold() {
        let m = Reg0Metadata::for_slot(0);
        assert_eq!(decide_action(&m, Score(1.98715)).verdict, Verdict::Drop);
        assert_eq!(decide_action(&m, Score(-0.0181384)).verdict, Verdict::Forward);
        assert_eq!(decide_action(&m, Score(0.0)).verdict, Verdict::Forward);
        assert_eq!(decide_action(&m, Score(-0.0)).verdict, Verdict::Forward);
        assert_eq!(decide_action(&m, Score(0.0)).reason, Reason::Inference);
    }

    #[test]
    fn slot_conditioned_scores() {
        let bank = bank(1, 2);
        let p = Pipeline::new(FrameParser::default(), MonoClock::new());
        let x = payload(9);
        let mut sink = NullSink::default();
        let r0 = p
            .process_packet(&bank, 0, build_frame(0, &x, [0; 8]).unwrap().as_ref(), &mut sink)
            .unwrap();
        let r1 = p
            .process_packet(&bank, 1, build_frame(1, &x, [0; 8]).unwrap().as_ref(), &mut sink)
            .unwrap();
        assert_ne!(r0.score, r1.score);
        assert_eq!(r0.slot_used, Some(SlotIndex(0)));
        assert_eq!(r1.slot_used, Some(SlotIndex(1)));
        assert_eq!(r0.stages_run, r1.stages_run);
        assert_eq!(
            r0.score.unwrap(),
            infer_reference(&bank.slot(SlotIndex(0)).model, &x).unwrap()
        );
    }

    #[test]
    fn out_of_range_and_malformed_drop() {
        let bank = bank(2, 2);
        let p = Pipeline::new(FrameParser::default(), MonoClock::new());
        let mut sink = NullSink::default();
        let f = build_frame(7, &payload(1), [0; 8]).unwrap();
        let r = p.process_packet(&bank, 0, f.as_ref(), &mut sink).unwrap();
        assert_eq!(r.action, Action::drop_for(Reason::SlotOutOfRange));
        assert_eq!(r.slot_used, None);
        assert!(r.times.is_ordered());

        let r = p.process_packet(&bank, 1, &[0u8; 100], &mut sink).unwrap();
        assert_eq!(r.action.reason, Reason::WrongLength);
        assert!(r.times.is_ordered());

        let mut f = PacketFrame::zeroed();
        f.set_format_version(9);
        let r = p.process_packet(&bank, 2, f.as_ref(), &mut sink).unwrap();
        assert_eq!(r.action.reason, Reason::VersionMismatch);
    }

    #[test]
    fn determinism() {
        let bank = bank(3, 2);
        let p = Pipeline::new(FrameParser::default(), MonoClock::new());
        let f = build_frame(1, &payload(4), [0; 8]).unwrap();
        let mut sink = NullSink::default();
        let a = p.process_packet(&bank, 0, f.as_ref(), &mut sink).unwrap();
        let b = p.process_packet(&bank, 0, f.as_ref(), &mut sink).unwrap();
        assert_eq!((a.slot_used, a.score, a.action), (b.slot_used, b.score, b.action));
    }

    #[test]
    fn run_counts_and_single_instances() {
        let bank = bank(5, 2);
        let frames: Vec<Vec<u8>> = (0..200u64)
            .map(|i| {
                build_frame((i % 3) as u32, &payload(i), [0; 8])
                    .unwrap()
                    .as_ref()
                    .to_vec()
            })
            .collect();
        let mut src = RingSource::new(frames);
        let mut sink = CollectSink::default();
        let report = run_pipeline(&bank, &mut src, &mut sink, &RunOptions::default()).unwrap();
        assert_eq!(report.offered, 200);
        assert_eq!(report.reasons.slot_out_of_range, 66);
        assert_eq!(report.processed, 134);
        assert_eq!(
            report.stage_instances,
            StageCounts {
                parsers: 1,
                executors: 1,
                policies: 1
            }
        );
        assert_eq!(sink.actions.len(), 200);
        for r in &report.records {
            assert!(r.times.is_ordered());
        }
    }

    #[test]
    fn empty_source() {
        let bank = bank(6, 1);
        let mut src = RingSource::new(Vec::new());
        let report = run_pipeline(&bank, &mut src, &mut NullSink::default(), &RunOptions::default()).unwrap();
        assert_eq!(report.processed, 0);
        assert_eq!(report.offered, 0);
        assert_eq!(report.stages.end_to_end.count, 0);
        assert_eq!(report.packets_per_second, 0.0);
    }

    #[test]
    fn sink_failure_marks_incomplete() {
        struct Failing(u32);
        impl PacketSink for Failing {
            fn emit(&mut self, _: &[u8], _: &Action) -> Result<(), SinkError> {
                self.0 += 1;
                if self.0 > 3 {
                    return Err(SinkError::Closed);
                }
                Ok(())
            }
        }
        let bank = bank(7, 1);
        let frames = (0..10u64)
            .map(|i| build_frame(0, &payload(i), [0; 8]).unwrap().as_ref().to_vec())
            .collect();
        let report = run_pipeline(
            &bank,
            &mut RingSource::new(frames),
            &mut Failing(0),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(report.incomplete);
        assert_eq!(report.offered, 3);
        assert!(report.error.is_some());
    }

    #[test]
    fn limit_is_honoured() {
        let bank = bank(8, 1);
        let frames = vec![build_frame(0, &payload(0), [0; 8]).unwrap().as_ref().to_vec()];
        let mut src = RingSource::new(frames).cycled(1000);
        let opts = RunOptions {
            limit: Some(250),
            warmup: 10,
        };
        let report = run_pipeline(&bank, &mut src, &mut NullSink::default(), &opts).unwrap();
        assert_eq!(report.offered, 250);
        assert_eq!(report.stages.end_to_end.count, 240);
    }

    #[test]
    fn rejects_toy_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bank =
            ModelBank::from_models(vec![ModelWeights::random(ModelDims::new(64, 4).unwrap(), &mut rng)]).unwrap();
        let r = run_pipeline(
            &bank,
            &mut RingSource::new(Vec::new()),
            &mut NullSink::default(),
            &RunOptions::default(),
        );
        assert!(matches!(r, Err(PipelineError::Shape(_))));
    }
}
