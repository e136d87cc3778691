use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use super::{AccessPattern, HarnessError, PayloadSource};
use crate::bank::{ModelBank, SlotIndex};
use crate::bnn::{infer_fast, infer_reference, Score};
use crate::frame::{build_frame, Reg0Metadata, PAYLOAD_LEN};
use crate::pipeline::{run_pipeline, MonoClock, NullSink, RingSource, RunOptions, StageLatencies};
use crate::stats::{median, LatencySummary};

/// Selections timed together; one resolve is far below clock resolution.
const SELECT_BATCH: usize = 256;
const INFER_BATCH: usize = 8;
const DISTINCT_FRAMES: usize = 1024;

/// Allowed relative difference of K=16 against K=2 mean selection latency.
pub const SCALING_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, Default, Serialize)]
pub struct BreakdownReport {
    pub n_packets: u64,
    /// Per-selection latency; min/median/p99 are over batch means of `select_batch` ops.
    pub select: LatencySummary,
    pub select_batch: usize,
    /// Per-inference latency; min/median/p99 are over batch means of `infer_batch` ops.
    pub infer: LatencySummary,
    pub infer_batch: usize,
    /// End-to-end `process_packet` latency, one clock pair per packet.
    pub full: LatencySummary,
    pub full_stages: StageLatencies,
    pub packets_per_second: f64,
    pub select_to_infer_ratio: f64,
    pub clock_overhead_ns: f64,
}

/// Times `ops` in batches; summary over per-op batch means, mean over all ops.
fn batched<F: FnMut(usize)>(n: usize, batch: usize, mut op: F) -> LatencySummary {
    if n == 0 {
        return LatencySummary::default();
    }
    let mut per_op = Vec::with_capacity(n / batch + 1);
    let mut total = 0.0;
    let mut i = 0;
    while i < n {
        let len = batch.min(n - i);
        let t = Instant::now();
        for j in i..i + len {
            op(j);
        }
        let ns = t.elapsed().as_nanos() as f64;
        total += ns;
        per_op.push(ns / len as f64);
        i += len;
    }
    let mut s = LatencySummary::from_samples(&per_op);
    s.count = n as u64;
    s.mean_ns = total / n as f64;
    s
}

#[inline]
fn select(bank: &ModelBank, meta: &Reg0Metadata) {
    if let Ok(k) = bank.resolve(black_box(meta)) {
        black_box(bank.cell(k));
    }
}

/// Mean latency of pure slot selection over `n` round-robin metadata records.
pub fn measure_select_ns(bank: &ModelBank, n: usize) -> f64 {
    let metas: Vec<Reg0Metadata> = AccessPattern::RoundRobin
        .generate(bank.len(), n.min(4096))
        .into_iter()
        .map(Reg0Metadata::for_slot)
        .collect();
    if metas.is_empty() {
        return 0.0;
    }
    batched(n, SELECT_BATCH, |i| select(bank, &metas[i % metas.len()])).mean_ns
}

/// Pure selection, pure inference and the full path over `n_packets` each.
pub fn bench_breakdown(
    bank: &ModelBank,
    n_packets: u64,
    payloads: &PayloadSource,
) -> Result<BreakdownReport, HarnessError> {
    let n = n_packets as usize;
    if n == 0 {
        return Ok(BreakdownReport {
            select_batch: SELECT_BATCH,
            infer_batch: INFER_BATCH,
            ..Default::default()
        });
    }
    let distinct = n.min(DISTINCT_FRAMES);
    let pool = payloads.take(distinct);
    let ids = AccessPattern::RoundRobin.generate(bank.len(), distinct);
    let metas: Vec<Reg0Metadata> = ids.iter().map(|&id| Reg0Metadata::for_slot(id)).collect();
    let resident = bank.snapshot(SlotIndex(0));
    let model = &resident.model;

    // warm caches and branch predictors
    for i in 0..distinct.min(256) {
        select(bank, &metas[i]);
        black_box(infer_fast(model, &pool[i])?);
    }

    let select_summary = batched(n, SELECT_BATCH, |i| select(bank, &metas[i % distinct]));
    let infer_summary = batched(n, INFER_BATCH, |i| {
        black_box(infer_fast(model, black_box(&pool[i % distinct])).expect("payload width"));
    });

    let frames: Vec<Vec<u8>> = ids
        .iter()
        .zip(&pool)
        .map(|(&id, p)| build_frame(id, p, [0; 8]).map(|f| f.as_ref().to_vec()))
        .collect::<Result<_, _>>()
        .expect("payload length is fixed");
    let mut source = RingSource::new(frames).cycled(n_packets);
    let options = RunOptions {
        limit: None,
        warmup: (n_packets / 10).min(1000),
    };
    let run = run_pipeline(bank, &mut source, &mut NullSink::default(), &options)?;

    Ok(BreakdownReport {
        n_packets,
        select_to_infer_ratio: if infer_summary.mean_ns > 0.0 {
            select_summary.mean_ns / infer_summary.mean_ns
        } else {
            0.0
        },
        select: select_summary,
        select_batch: SELECT_BATCH,
        infer: infer_summary,
        infer_batch: INFER_BATCH,
        full: run.stages.end_to_end,
        full_stages: run.stages,
        packets_per_second: run.packets_per_second,
        clock_overhead_ns: MonoClock::new().read_overhead_ns(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingConfig {
    /// Selections per measurement.
    pub n_packets: usize,
    /// Selection+inference operations per measurement.
    pub infer_packets: usize,
    /// Interleaved repetitions; reported means are medians over rounds.
    pub rounds: usize,
    pub payload_seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            n_packets: 100_000,
            infer_packets: 20_000,
            rounds: 9,
            payload_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub pattern: AccessPattern,
    pub slots: usize,
    pub select_mean_ns: f64,
    pub select_infer_mean_ns: f64,
    pub select_round_means_ns: Vec<f64>,
    /// Selections per slot id over one pass of the pattern.
    pub hits: Vec<u64>,
    pub ids_exercised: usize,
    /// Every generated id resolved to its own slot and scored with that slot's parameters.
    pub all_correct: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingComparison {
    pub pattern: String,
    pub select_k2_ns: f64,
    pub select_k16_ns: f64,
    /// |K16 - K2| / K2.
    pub relative_difference: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    pub tolerance: f64,
    pub rows: Vec<ScalingRow>,
    pub comparisons: Vec<ScalingComparison>,
    pub all_correct: bool,
}

struct Prepared<'a> {
    bank: &'a ModelBank,
    metas: Vec<Reg0Metadata>,
    probe_scores: Vec<Score>,
    row: ScalingRow,
}

fn prepare<'a>(
    bank: &'a ModelBank,
    pattern: AccessPattern,
    cfg: &ScalingConfig,
    probe: &[u8; PAYLOAD_LEN],
) -> Prepared<'a> {
    let ids = pattern.generate(bank.len(), cfg.n_packets);
    // fingerprints of what each slot should hold, taken directly from the cells
    let probe_scores: Vec<Score> = (0..bank.len())
        .map(|k| infer_reference(&bank.snapshot(SlotIndex(k)).model, probe).expect("payload width"))
        .collect();
    let mut hits = vec![0u64; bank.len()];
    let mut all_correct = true;
    for &id in &ids {
        match bank.resolve_id(id) {
            Ok(k) if k.0 == id as usize => hits[k.0] += 1,
            _ => all_correct = false,
        }
    }
    // route every exercised id through selection and compare the score
    for (id, _) in hits.iter().enumerate().filter(|(_, &h)| h > 0) {
        let k = bank.resolve(&Reg0Metadata::for_slot(id as u32));
        let ok = k
            .map(|k| infer_fast(&bank.slot(k).model, probe).ok() == Some(probe_scores[id]))
            .unwrap_or(false);
        all_correct &= ok;
    }
    Prepared {
        bank,
        metas: ids.into_iter().map(Reg0Metadata::for_slot).collect(),
        probe_scores,
        row: ScalingRow {
            pattern,
            slots: bank.len(),
            select_mean_ns: 0.0,
            select_infer_mean_ns: 0.0,
            select_round_means_ns: Vec::new(),
            ids_exercised: hits.iter().filter(|&&h| h > 0).count(),
            hits,
            all_correct,
        },
    }
}

/// Selection and selection+inference latency for each pattern on a 2-slot
/// and a 16-slot bank. Rounds alternate between the banks so that drift in
/// machine state affects both alike.
pub fn bench_scaling(
    bank2: &ModelBank,
    bank16: &ModelBank,
    patterns: &[AccessPattern],
    cfg: &ScalingConfig,
) -> Result<ScalingReport, HarnessError> {
    let pool = PayloadSource::Seeded(cfg.payload_seed).take(256);
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    for &pattern in patterns {
        let mut pair = [
            prepare(bank2, pattern, cfg, &pool[0]),
            prepare(bank16, pattern, cfg, &pool[0]),
        ];
        let mut infer_rounds: [Vec<f64>; 2] = Default::default();
        for _ in 0..cfg.rounds.max(1) {
            for (p, ir) in pair.iter_mut().zip(infer_rounds.iter_mut()) {
                let (bank, metas) = (p.bank, &p.metas);
                let mean = batched(metas.len(), SELECT_BATCH, |i| select(bank, &metas[i])).mean_ns;
                p.row.select_round_means_ns.push(mean);
                let m = cfg.infer_packets.min(metas.len());
                let mean = batched(m, INFER_BATCH, |i| {
                    if let Ok(k) = bank.resolve(black_box(&metas[i])) {
                        black_box(infer_fast(&bank.slot(k).model, &pool[i % pool.len()]).expect("payload width"));
                    }
                })
                .mean_ns;
                ir.push(mean);
            }
        }
        for (p, ir) in pair.iter_mut().zip(&infer_rounds) {
            p.row.select_mean_ns = median(&p.row.select_round_means_ns);
            p.row.select_infer_mean_ns = median(ir);
            debug_assert_eq!(p.probe_scores.len(), p.bank.len());
        }
        let (k2, k16) = (pair[0].row.select_mean_ns, pair[1].row.select_mean_ns);
        let rel = if k2 > 0.0 { (k16 - k2).abs() / k2 } else { 0.0 };
        comparisons.push(ScalingComparison {
            pattern: pattern.name().to_string(),
            select_k2_ns: k2,
            select_k16_ns: k16,
            relative_difference: rel,
            within_tolerance: rel <= SCALING_TOLERANCE,
        });
        rows.extend(pair.into_iter().map(|p| p.row));
    }
    Ok(ScalingReport {
        config: cfg.clone(),
        tolerance: SCALING_TOLERANCE,
        all_correct: rows.iter().all(|r| r.all_correct),
        rows,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{ModelDims, ModelWeights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> Vec<ModelWeights> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (0..2).map(|_| ModelWeights::random(ModelDims::H32, &mut rng)).collect()
    }

    fn alternated(k: usize) -> ModelBank {
        let p = pair();
        ModelBank::from_models((0..k).map(|i| p[i % 2].clone()).collect()).unwrap()
    }

    #[test]
    fn empty_breakdown() {
        let r = bench_breakdown(&alternated(2), 0, &PayloadSource::Seeded(1)).unwrap();
        assert_eq!(r.n_packets, 0);
        assert_eq!(r.select.count, 0);
        assert_eq!(r.select_to_infer_ratio, 0.0);
        assert_eq!(r.packets_per_second, 0.0);
    }

    #[test]
    fn breakdown_ordering() {
        let r = bench_breakdown(&alternated(2), 20_000, &PayloadSource::Seeded(1)).unwrap();
        assert!(r.select.mean_ns < r.infer.mean_ns, "{r:?}");
        assert!(r.full.mean_ns >= r.infer.mean_ns, "{r:?}");
        assert!(r.full.count > 0);
    }

    #[test]
    fn scaling_correctness_and_hits() {
        let cfg = ScalingConfig {
            n_packets: 3200,
            infer_packets: 64,
            rounds: 1,
            payload_seed: 2,
        };
        let r = bench_scaling(
            &alternated(2),
            &alternated(16),
            &[AccessPattern::RoundRobin, AccessPattern::Fixed { slot: 3 }],
            &cfg,
        )
        .unwrap();
        assert!(r.all_correct);
        let rr16 = r
            .rows
            .iter()
            .find(|x| x.slots == 16 && x.pattern == AccessPattern::RoundRobin)
            .unwrap();
        assert_eq!(rr16.ids_exercised, 16);
        assert!(rr16.hits.iter().all(|&h| h == 200));
        let fixed16 = r
            .rows
            .iter()
            .find(|x| x.slots == 16 && x.pattern.name() == "fixed")
            .unwrap();
        assert_eq!(fixed16.hits[3], 3200);
        assert_eq!(r.comparisons.len(), 2);
    }

    #[test]
    fn alternated_slots_have_distinct_fingerprints() {
        let bank = alternated(2);
        let pool = PayloadSource::Seeded(2).take(1);
        let cfg = ScalingConfig {
            n_packets: 10,
            ..Default::default()
        };
        let p = prepare(&bank, AccessPattern::RoundRobin, &cfg, &pool[0]);
        assert!(p.row.all_correct);
        assert_ne!(p.probe_scores[0], p.probe_scores[1]);
    }
}
