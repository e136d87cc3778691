//! Command-line entry point. Every subcommand prints (or writes) one JSON
//! report that embeds the effective configuration.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{parse_kv, ConfigError};

use crate::bank::{load_bank, ModelBank};
use crate::bnn::{load_model, load_model_bytes, save_model, ModelDims, ModelWeights};
use crate::frame::{build_frame, INPUT_BITS};
use crate::harness::{
    bench_breakdown, bench_scaling, gen_boundary_trace, run_continuity, run_control_compare, AccessPattern,
    ContinuityConfig, ControlConfig, PayloadSource, ScalingConfig, DEFAULT_PACING_NS,
};
use crate::pipeline::{
    run_pipeline, write_records_csv, NullSink, PacedSource, PacketRecord, PacketSink, PacketSource, RingSource,
    RunOptions, UdpSink, UdpSource,
};
use crate::trace::{read_trace, write_trace};
use crate::trainer::{
    evaluate, generate_dataset, read_dataset, split_samples, train_on_split, write_dataset, Concept, DatasetParams,
    MajorityBitOracle, Sample, SelectionMetric, TrainConfig,
};

pub const SCHEMA_VERSION: &str = "slotpath-report/1";

#[derive(Parser, Debug)]
#[command(name = "slotpath", version, about = "Resident multi-slot BNN packet classification")]
struct Cli {
    /// key = value file; flags given on the command line take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train one slot model on synthetic (or gen-data) samples
    Train(TrainArgs),
    /// Write a labelled synthetic dataset
    GenData(GenDataArgs),
    /// Write a timed slot-boundary trace
    GenTrace(GenTraceArgs),
    /// Run the forwarding pipeline over a ring, UDP or trace source
    Run(RunArgs),
    /// Describe a weight file
    InspectModel(InspectArgs),
    /// Load a bank and report its shape and footprint
    BankInfo(BankInfoArgs),
    /// Selection, inference and full-path latency
    BenchBreakdown(BreakdownArgs),
    /// Selection latency for 2 and 16 resident slots under each access pattern
    BenchScaling(ScalingArgs),
    /// Replay a boundary trace and check slot and verdict continuity
    ReplayContinuity(ContinuityArgs),
    /// Control-plane weight replacement against resident switching
    CompareControl(ControlArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Probability that a sample is malicious
    #[arg(long, default_value_t = 0.5)]
    prior: f64,
    #[arg(long, default_value_t = 1024)]
    informative_bits: usize,
    #[arg(long, default_value_t = 0.075)]
    bias: f64,
    /// Fraction of malicious samples that barely differ from benign ones
    #[arg(long, default_value_t = 0.15)]
    camouflaged: f64,
    /// Copy the label into this bit over a fixed background instead
    #[arg(long)]
    planted_bit: Option<usize>,
}

impl DataArgs {
    fn params(&self) -> DatasetParams {
        DatasetParams {
            seed: self.seed,
            samples: self.samples,
            malicious_prior: self.prior,
            concept: match self.planted_bit {
                Some(bit) => Concept::PlantedBit { bit },
                None => Concept::Biased {
                    informative_bits: self.informative_bits,
                    bias: self.bias,
                    camouflaged: self.camouflaged,
                },
            },
            require_separable: true,
        }
    }

    fn load(&self, file: Option<&Path>) -> Result<Vec<Sample>> {
        Ok(match file {
            Some(p) => read_dataset(p).with_context(|| format!("reading dataset {}", p.display()))?,
            None => generate_dataset(&self.params())?.samples,
        })
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Read samples from a gen-data file instead of generating them
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    pos_weight: f64,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    /// recall, precision or f1
    #[arg(long, default_value = "recall")]
    selection_metric: SelectionMetric,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.25)]
    val_fraction: f64,
    /// Seed for initialisation, shuffling and the validation split
    #[arg(long, default_value_t = 1)]
    train_seed: u64,
    #[arg(long, short)]
    output: PathBuf,
    /// Validation metrics JSON; defaults to OUTPUT.metrics.json
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct TraceGenArgs {
    #[arg(long, default_value_t = 64)]
    packets: usize,
    /// First slot-1 record; defaults to packets / 2
    #[arg(long)]
    boundary: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_PACING_NS)]
    pacing_ns: u64,
    #[arg(long, default_value_t = 1)]
    payload_seed: u64,
    /// Draw payloads from a gen-data file instead of a seeded generator
    #[arg(long)]
    payloads: Option<PathBuf>,
}

impl TraceGenArgs {
    fn build(&self) -> Result<Vec<crate::trace::TraceRecord>> {
        let source = match &self.payloads {
            Some(p) => PayloadSource::Pool(read_dataset(p)?.iter().map(|s| *s.payload).collect()),
            None => PayloadSource::Seeded(self.payload_seed),
        };
        let boundary = self.boundary.unwrap_or(self.packets / 2);
        Ok(gen_boundary_trace(self.packets, boundary, &source, self.pacing_ns)?)
    }

    fn trace_or_generate(&self, path: Option<&Path>) -> Result<Vec<crate::trace::TraceRecord>> {
        match path {
            Some(p) => read_trace(p).with_context(|| format!("reading trace {}", p.display())),
            None => self.build(),
        }
    }
}

#[derive(Args, Debug)]
struct GenTraceArgs {
    #[command(flatten)]
    gen: TraceGenArgs,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SourceKind {
    Ring,
    Udp,
    Trace,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Model files, one per slot, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    bank: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "ring")]
    source: SourceKind,
    /// Trace file for the trace source; also seeds the ring when given
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Frames offered by the ring source
    #[arg(long, default_value_t = 10_000)]
    packets: u64,
    /// Slot ids of generated ring frames
    #[arg(long, default_value = "round_robin")]
    pattern: AccessPattern,
    #[arg(long, default_value_t = 1)]
    payload_seed: u64,
    #[arg(long)]
    limit: Option<u64>,
    /// Honour trace emit times
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    pacing: bool,
    #[arg(long, default_value = "127.0.0.1:9000")]
    listen: SocketAddr,
    /// UDP source stops after this long without a datagram
    #[arg(long, default_value_t = 500)]
    idle_ms: u64,
    /// Send forwarded frames here; otherwise they are counted and discarded
    #[arg(long)]
    forward_to: Option<SocketAddr>,
    #[arg(long, default_value_t = 64)]
    warmup: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-packet records
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    model: PathBuf,
    #[arg(long, default_value_t = INPUT_BITS)]
    input_bits: usize,
}

#[derive(Args, Debug)]
struct BankInfoArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    bank: Vec<PathBuf>,
    /// Fill this many slots by cycling through the given files
    #[arg(long)]
    slots: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelChoice {
    /// Model files; random seeded h32 models when omitted
    #[arg(long, value_delimiter = ',')]
    bank: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    model_seed: u64,
}

impl ModelChoice {
    fn models(&self, default_count: usize) -> Result<Vec<ModelWeights>> {
        if self.bank.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.model_seed);
            return Ok((0..default_count)
                .map(|_| ModelWeights::random(ModelDims::H32, &mut rng))
                .collect());
        }
        self.bank
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                load_model_bytes(&bytes, INPUT_BITS).with_context(|| format!("loading {}", p.display()))
            })
            .collect()
    }
}

#[derive(Args, Debug)]
struct BreakdownArgs {
    #[command(flatten)]
    models: ModelChoice,
    #[arg(long, default_value_t = 100_000)]
    packets: u64,
    #[arg(long, default_value_t = 1)]
    payload_seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScalingArgs {
    /// Two weight sets, alternated across the 2- and 16-slot banks
    #[command(flatten)]
    models: ModelChoice,
    #[arg(long, default_value_t = 100_000)]
    packets: usize,
    #[arg(long, default_value_t = 20_000)]
    infer_packets: usize,
    #[arg(long, default_value_t = 9)]
    rounds: usize,
    #[arg(long, default_value_t = 1)]
    payload_seed: u64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "fixed:3,round_robin,random:1,hotspot:0:0.9:1"
    )]
    patterns: Vec<AccessPattern>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ContinuityArgs {
    #[command(flatten)]
    models: ModelChoice,
    /// Trace file; generated from the flags below when omitted
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    gen: TraceGenArgs,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    paced: bool,
    #[arg(long, default_value_t = 64)]
    warmup: u64,
    #[arg(long, default_value_t = 512)]
    window: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ControlArgs {
    /// Initially active model; random seeded when omitted
    #[arg(long)]
    slot0: Option<PathBuf>,
    /// Model delivered over the control channel; random seeded when omitted
    #[arg(long)]
    slot1: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    model_seed: u64,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    gen: TraceGenArgs,
    #[arg(long, default_value_t = 5_000.0)]
    transfer_latency_us: f64,
    #[arg(long, default_value_t = 0.0)]
    trigger_delay_us: f64,
    #[arg(long, default_value_t = 64)]
    warmup: u64,
    #[arg(long, default_value_t = 512)]
    window: usize,
    #[arg(long, default_value_t = 100_000)]
    select_samples: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-packet records of the control-plane run
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: &'static str,
    command: &'a str,
    config_file: Option<&'a Path>,
    config: &'a BTreeMap<String, String>,
    report: T,
}

struct Ctx<'a> {
    command: &'a str,
    config_file: Option<&'a Path>,
    config: &'a BTreeMap<String, String>,
}

impl Ctx<'_> {
    fn emit<T: Serialize>(&self, report: T, path: Option<&Path>) -> Result<()> {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            command: self.command,
            config_file: self.config_file,
            config: self.config,
            report,
        };
        match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
                serde_json::to_writer_pretty(&mut w, &env)?;
                writeln!(w)?;
                w.flush()?;
                log::info!("report written to {}", p.display());
            }
            None => {
                let stdout = std::io::stdout();
                let mut w = stdout.lock();
                serde_json::to_writer_pretty(&mut w, &env)?;
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

fn write_csv(records: &[PacketRecord], path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_records_csv(records, BufWriter::new(f))?;
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code: 0 success, 1 operational error, 2 usage error.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let bin = argv
        .first()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "slotpath".into());
    let cli = match resolve(&bin, &argv) {
        Ok(v) => v,
        Err(Resolve::Clap(e)) => {
            let _ = e.print();
            return e.exit_code();
        }
        Err(Resolve::Config(e)) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": "usage", "message": e.to_string()}})
            );
            return 2;
        }
    };
    let (parsed, config) = cli;
    let _ = env_logger::Builder::new().filter_level(parsed.log_level).try_init();
    let ctx = Ctx {
        command: parsed.command.name(),
        config_file: parsed.config.as_deref(),
        config: &config,
    };
    match run(&ctx, &parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": "operational", "command": ctx.command, "message": format!("{e:#}")}})
            );
            1
        }
    }
}

enum Resolve {
    Clap(clap::Error),
    Config(ConfigError),
}

/// First parse for structure, then re-parse defaults + file + flags merged.
fn resolve(bin: &str, argv: &[OsString]) -> Result<(Cli, BTreeMap<String, String>), Resolve> {
    let cmd = Cli::command();
    // required values may come from the config file, so the first pass only checks shape
    let mut relaxed = cmd.clone();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in names {
        relaxed = relaxed.mut_subcommand(n, |s| s.mut_args(|a| a.required(false)));
    }
    let matches = relaxed.try_get_matches_from(argv).map_err(Resolve::Clap)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists").clone();
    let file = matches.get_one::<PathBuf>("config").cloned();
    let map = config::effective(&sub_cmd, sub, file.as_deref(), &["config", "log_level"]).map_err(Resolve::Config)?;

    let mut global = Vec::new();
    if let Some(f) = &file {
        global.push(("config".to_string(), f.display().to_string()));
    }
    if let Some(level) = matches.get_raw("log_level").and_then(|mut v| v.next()) {
        global.push(("log_level".to_string(), level.to_string_lossy().into_owned()));
    }
    let merged = config::to_argv(bin, &global, &sub_cmd, &map);
    let m = Cli::command().try_get_matches_from(merged).map_err(Resolve::Clap)?;
    let cli = Cli::from_arg_matches(&m).map_err(Resolve::Clap)?;
    Ok((cli, map))
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Train(_) => "train",
            Cmd::GenData(_) => "gen-data",
            Cmd::GenTrace(_) => "gen-trace",
            Cmd::Run(_) => "run",
            Cmd::InspectModel(_) => "inspect-model",
            Cmd::BankInfo(_) => "bank-info",
            Cmd::BenchBreakdown(_) => "bench-breakdown",
            Cmd::BenchScaling(_) => "bench-scaling",
            Cmd::ReplayContinuity(_) => "replay-continuity",
            Cmd::CompareControl(_) => "compare-control",
        }
    }
}

fn run(ctx: &Ctx<'_>, cmd: &Cmd) -> Result<()> {
    match cmd {
        Cmd::Train(a) => train(ctx, a),
        Cmd::GenData(a) => gen_data(ctx, a),
        Cmd::GenTrace(a) => {
            let records = a.gen.build()?;
            write_trace(&a.output, &records)?;
            ctx.emit(
                serde_json::json!({
                    "path": a.output,
                    "records": records.len(),
                    "boundary_index": a.gen.boundary.unwrap_or(a.gen.packets / 2),
                    "pacing_ns": a.gen.pacing_ns,
                    "size_bytes": std::fs::metadata(&a.output)?.len(),
                }),
                None,
            )
        }
        Cmd::Run(a) => run_cmd(ctx, a),
        Cmd::InspectModel(a) => inspect(ctx, a),
        Cmd::BankInfo(a) => bank_info(ctx, a),
        Cmd::BenchBreakdown(a) => {
            let bank = ModelBank::from_models(a.models.models(2)?)?;
            let r = bench_breakdown(&bank, a.packets, &PayloadSource::Seeded(a.payload_seed))?;
            ctx.emit(r, a.report.as_deref())
        }
        Cmd::BenchScaling(a) => {
            let models = a.models.models(2)?;
            let alternate =
                |k: usize| ModelBank::from_models((0..k).map(|i| models[i % models.len()].clone()).collect());
            let (bank2, bank16) = (alternate(2)?, alternate(16)?);
            let cfg = ScalingConfig {
                n_packets: a.packets,
                infer_packets: a.infer_packets,
                rounds: a.rounds,
                payload_seed: a.payload_seed,
            };
            let r = bench_scaling(&bank2, &bank16, &a.patterns, &cfg)?;
            ctx.emit(r, a.report.as_deref())
        }
        Cmd::ReplayContinuity(a) => {
            let bank = ModelBank::from_models(a.models.models(2)?)?;
            let trace = a.gen.trace_or_generate(a.trace.as_deref())?;
            let cfg = ContinuityConfig {
                paced: a.paced,
                warmup: a.warmup,
                window: a.window,
            };
            let r = run_continuity(&bank, &trace, &cfg)?;
            write_csv(&r.pipeline.records, a.csv.as_deref())?;
            ctx.emit(r, a.report.as_deref())
        }
        Cmd::CompareControl(a) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.model_seed);
            let mut pick = |p: &Option<PathBuf>| -> Result<ModelWeights> {
                let random = ModelWeights::random(ModelDims::H32, &mut rng);
                match p {
                    Some(p) => Ok(load_model(p, ModelDims::H32).with_context(|| format!("loading {}", p.display()))?),
                    None => Ok(random),
                }
            };
            let (s0, s1) = (pick(&a.slot0)?, pick(&a.slot1)?);
            let trace = a.gen.trace_or_generate(a.trace.as_deref())?;
            let cfg = ControlConfig {
                trigger_delay_us: a.trigger_delay_us,
                transfer_latency_us: a.transfer_latency_us,
                continuity: ContinuityConfig {
                    paced: true,
                    warmup: a.warmup,
                    window: a.window,
                },
                select_samples: a.select_samples,
            };
            let r = run_control_compare(&s0, &s1, &trace, &cfg)?;
            write_csv(&r.control.pipeline.records, a.csv.as_deref())?;
            ctx.emit(r, a.report.as_deref())
        }
    }
}

fn train(ctx: &Ctx<'_>, a: &TrainArgs) -> Result<()> {
    let samples = a.data.load(a.dataset.as_deref())?;
    let cfg = TrainConfig {
        pos_weight: a.pos_weight,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.train_seed,
        selection_metric: a.selection_metric,
        hidden: a.hidden,
        batch_size: a.batch_size,
        val_fraction: a.val_fraction,
    };
    let split = split_samples(&samples, cfg.val_fraction, cfg.seed);
    if split.validation.is_empty() {
        bail!("validation split is empty; raise --samples or --val-fraction");
    }
    let trained = train_on_split(&split.train, &split.validation, &cfg)?;
    save_model(&trained.model, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| {
        let mut p = a.output.clone().into_os_string();
        p.push(".metrics.json");
        p.into()
    });
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&trained.validation)? + "\n")
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    ctx.emit(
        serde_json::json!({
            "model_path": a.output,
            "metrics_path": metrics_path,
            "size_bytes": trained.model.file_size(),
            "train_samples": split.train.len(),
            "validation_samples": split.validation.len(),
            "best_epoch": trained.best_epoch,
            "validation": trained.validation,
            "history": trained.history,
        }),
        None,
    )
}

fn gen_data(ctx: &Ctx<'_>, a: &GenDataArgs) -> Result<()> {
    let ds = generate_dataset(&a.data.params())?;
    write_dataset(&a.output, &ds.samples)?;
    let oracle = MajorityBitOracle::fit(&ds.samples);
    ctx.emit(
        serde_json::json!({
            "path": a.output,
            "samples": ds.samples.len(),
            "malicious": ds.malicious_count(),
            "size_bytes": std::fs::metadata(&a.output)?.len(),
            "params": ds.params,
            "majority_bit_oracle": evaluate(&oracle.to_model(), &ds.samples),
        }),
        None,
    )
}

#[derive(Serialize)]
struct ModelSummary {
    path: PathBuf,
    size_bytes: u64,
    input_bits: usize,
    hidden: usize,
    b1_min: i8,
    b1_max: i8,
    w2_min: f32,
    w2_max: f32,
    b2: f32,
    cost_model: crate::bnn::CostModel,
}

fn inspect(ctx: &Ctx<'_>, a: &InspectArgs) -> Result<()> {
    let bytes = std::fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let m = load_model_bytes(&bytes, a.input_bits).with_context(|| format!("loading {}", a.model.display()))?;
    let fold = |f: fn(f32, f32) -> f32, init: f32| m.w2().iter().copied().fold(init, f);
    let summary = ModelSummary {
        path: a.model.clone(),
        size_bytes: bytes.len() as u64,
        input_bits: m.input_bits(),
        hidden: m.hidden(),
        b1_min: m.b1().iter().copied().min().unwrap_or(0),
        b1_max: m.b1().iter().copied().max().unwrap_or(0),
        w2_min: fold(f32::min, f32::INFINITY),
        w2_max: fold(f32::max, f32::NEG_INFINITY),
        b2: m.b2(),
        cost_model: m.cost_model(),
    };
    ctx.emit(summary, None)
}

fn bank_info(ctx: &Ctx<'_>, a: &BankInfoArgs) -> Result<()> {
    let slots = a.slots.unwrap_or(a.bank.len());
    if slots == 0 {
        bail!("--slots must be positive");
    }
    let paths: Vec<&PathBuf> = a.bank.iter().cycle().take(slots).collect();
    let bank = load_bank(&paths, INPUT_BITS)?;
    let files: Vec<_> = paths
        .iter()
        .enumerate()
        .map(|(slot, p)| serde_json::json!({"slot": slot, "path": p}))
        .collect();
    let mut report = serde_json::to_value(bank.info())?;
    report["files"] = serde_json::Value::Array(files);
    ctx.emit(report, None)
}

fn run_cmd(ctx: &Ctx<'_>, a: &RunArgs) -> Result<()> {
    let bank = load_bank(&a.bank, INPUT_BITS)?;
    let mut source: Box<dyn PacketSource> = match a.source {
        SourceKind::Ring => {
            let frames: Vec<Vec<u8>> = match &a.trace {
                Some(p) => read_trace(p)?.into_iter().map(|r| r.frame.as_ref().to_vec()).collect(),
                None => {
                    let distinct = (a.packets as usize).clamp(1, 4096);
                    let ids = a.pattern.generate(bank.len(), distinct);
                    PayloadSource::Seeded(a.payload_seed)
                        .take(distinct)
                        .iter()
                        .zip(ids)
                        .map(|(p, id)| build_frame(id, &p[..], [0; 8]).map(|f| f.as_ref().to_vec()))
                        .collect::<Result<_, _>>()?
                }
            };
            Box::new(RingSource::new(frames).cycled(a.packets))
        }
        SourceKind::Trace => {
            let Some(p) = &a.trace else {
                bail!("--source trace needs --trace")
            };
            Box::new(PacedSource::new(read_trace(p)?, a.pacing))
        }
        SourceKind::Udp => {
            let src = UdpSource::bind(a.listen, Duration::from_millis(a.idle_ms))
                .with_context(|| format!("binding {}", a.listen))?;
            log::info!("listening on {}", src.local_addr()?);
            Box::new(src)
        }
    };
    let mut sink: Box<dyn PacketSink> = match a.forward_to {
        Some(dest) => Box::new(UdpSink::connect(dest).with_context(|| format!("connecting {dest}"))?),
        None => Box::new(NullSink::default()),
    };
    let options = RunOptions {
        limit: a.limit,
        warmup: a.warmup,
    };
    let report = run_pipeline(&bank, source.as_mut(), sink.as_mut(), &options)?;
    write_csv(&report.records, a.csv.as_deref())?;
    let incomplete = report.incomplete;
    let err = report.error.clone();
    ctx.emit(&report, a.report.as_deref())?;
    if incomplete {
        bail!("run stopped early: {}", err.unwrap_or_default());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file_and_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "packets = 128\npacing-ns = 5\n").unwrap();
        let argv: Vec<OsString> = [
            "slotpath",
            "gen-trace",
            "--config",
            cfg.to_str().unwrap(),
            "--pacing-ns",
            "7",
            "-o",
            "t.bin",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let (cli, map) = resolve("slotpath", &argv).ok().unwrap();
        assert_eq!(map["packets"], "128");
        assert_eq!(map["pacing_ns"], "7");
        assert_eq!(map["payload_seed"], "1");
        let Cmd::GenTrace(a) = cli.command else { panic!() };
        assert_eq!((a.gen.packets, a.gen.pacing_ns), (128, 7));
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "colour = blue\n").unwrap();
        let argv = ["slotpath", "--config", cfg.to_str().unwrap(), "gen-trace", "-o", "x"];
        assert_eq!(dispatch(argv), 2);
    }

    #[test]
    fn required_value_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "output = from-file.bin\n").unwrap();
        let argv: Vec<OsString> = ["slotpath", "gen-trace", "--config", cfg.to_str().unwrap()]
            .iter()
            .map(OsString::from)
            .collect();
        let (cli, _) = resolve("slotpath", &argv).ok().unwrap();
        let Cmd::GenTrace(a) = cli.command else { panic!() };
        assert_eq!(a.output, PathBuf::from("from-file.bin"));
        // still required when neither source supplies it
        let argv: Vec<OsString> = ["slotpath", "gen-trace"].iter().map(OsString::from).collect();
        assert!(resolve("slotpath", &argv).is_err());
    }

    #[test]
    fn positional_survives_reparse() {
        let argv: Vec<OsString> = ["slotpath", "inspect-model", "m.bin"]
            .iter()
            .map(OsString::from)
            .collect();
        let (cli, map) = resolve("slotpath", &argv).ok().unwrap();
        assert_eq!(map["model"], "m.bin");
        let Cmd::InspectModel(a) = cli.command else { panic!() };
        assert_eq!(a.model, PathBuf::from("m.bin"));
    }
}
