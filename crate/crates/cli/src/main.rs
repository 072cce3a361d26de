//! `iohmm`: fit hidden-state workload models to binned storage IO traces,
//! generate synthetic traces from them, check their statistical fidelity,
//! and derive arrival-process and queueing parameters.
//!
//! Every stage reads and writes plain files (CSV for traces and plot data,
//! JSON for models and reports), so raw and synthetic artifacts are
//! interchangeable at each boundary. Each output gets a
//! `<output>.manifest.json` sidecar recording the invocation, input digests,
//! and seed that produced it.

mod manifest;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use iohmm_core::cluster::{fit_clusters, observation_sequence, ClusterMode, ClusterModel};
use iohmm_core::hmm::{baum_welch, sweep_states, viterbi, FitInit, FitOptions, Hmm};
use iohmm_core::mapgen::{
    add_erase_state, derive_map, geometric_run_lengths, run_lengths, GeneratorVariant,
};
use iohmm_core::qsim::{
    compare_raw_vs_hmm, simulate_queue, ArrivalSpread, QueueSimConfig, Scheme, ServiceTimes,
};
use iohmm_core::stats::validate as validate_fidelity;
use iohmm_core::synth::{generate_trace, replicate_seeds, GenConfig};
use iohmm_core::trace::{
    bin_trace, parse_trace, read_binned_csv, thin_periodic, write_binned_csv, BinnedTrace,
};

use manifest::write_manifest;

#[derive(Parser)]
#[command(
    name = "iohmm",
    version,
    about = "Workload modeling for storage IO traces: bin, cluster, fit, generate, validate, derive arrival and queueing parameters",
    after_help = "File formats:\n  \
        raw trace CSV    timestamp_us,op,size_blocks   (op is R or W)\n  \
        binned CSV       bin_index,reads,writes        (blocks per bin)\n  \
        models/reports   JSON, schema shown by each subcommand's --help\n\
        Exit codes: 0 ok, 1 error, 2 validation flagged."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate a raw trace into uniform-width bins of read/write block counts
    Bin(BinArgs),
    /// Keep only chosen sub-bin positions of each period (sparse periodic traces)
    Thin(ThinArgs),
    /// Build the observation alphabet by clustering (reads, writes) bins
    Cluster(ClusterArgs),
    /// Fit a hidden Markov model to the cluster-id sequence of a binned trace
    Fit(FitArgs),
    /// Fit several state counts and tabulate likelihoods and duplicate-state hints
    Sweep(SweepArgs),
    /// Recover the most likely hidden-state path for a binned trace
    Decode(DecodeArgs),
    /// Generate synthetic binned traces from a fitted model
    Gen(GenArgs),
    /// Check synthetic-trace fidelity against a raw trace (moments, ACF)
    Validate(ValidateArgs),
    /// Derive continuous-time arrival-process parameters (generator matrix, rates)
    Map(MapArgs),
    /// Run binned traces through a single-server priority queue
    Qsim(QsimArgs),
}

#[derive(Args, Serialize)]
struct BinArgs {
    /// Raw trace CSV: timestamp_us,op,size_blocks
    #[arg(long)]
    input: PathBuf,
    /// Bin width in microseconds
    #[arg(long)]
    bin_width_us: u64,
    /// Output binned CSV: bin_index,reads,writes
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct ThinArgs {
    /// Binned CSV to thin
    #[arg(long)]
    input: PathBuf,
    /// Length of the repeating pattern, in bins
    #[arg(long)]
    period: usize,
    /// Comma-separated sub-bin positions to keep, e.g. 0,1,2,4
    #[arg(long)]
    keep: String,
    /// Output binned CSV (indices renumbered contiguously)
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    /// k-means on (reads, writes) jointly
    Joint,
    /// independent read/write levels, alphabet = kr x kw cells
    Product,
}

#[derive(Args, Serialize)]
struct ClusterArgs {
    /// Binned CSV to cluster
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Cluster count for --mode joint
    #[arg(long)]
    k: Option<usize>,
    /// Read-level count for --mode product
    #[arg(long)]
    kr: Option<usize>,
    /// Write-level count for --mode product
    #[arg(long)]
    kw: Option<usize>,
    /// Reserve a dedicated cluster for exactly-empty (0,0) bins
    #[arg(long)]
    zero_singleton: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output cluster model JSON
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Binned CSV the model is fitted to
    #[arg(long)]
    input: PathBuf,
    /// Cluster model JSON defining the observation alphabet
    #[arg(long)]
    clusters: PathBuf,
    /// Number of hidden states
    #[arg(long)]
    states: usize,
    /// Random restarts; the best final likelihood wins
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Stop when the log likelihood improves by less than this
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model JSON: {r, m, nu, Q, G}
    #[arg(long)]
    output: PathBuf,
    /// Optional per-iteration likelihood CSV: iteration,log_likelihood
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Comma-separated state counts to try, e.g. 2,3,4,5
    #[arg(long)]
    states: String,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV: r,log_likelihood,iterations,duplicate_pairs
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Fitted model JSON
    #[arg(long)]
    hmm: PathBuf,
    /// Output CSV: bin_index,state
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct GenArgs {
    #[arg(long)]
    hmm: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Number of bins per replicate
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bin width the generated trace represents, microseconds
    #[arg(long)]
    bin_width_us: u64,
    /// Rejection-sampling budget per bin before clamping at zero
    #[arg(long, default_value_t = 1000)]
    max_rejections: usize,
    /// Output binned CSV; replicate i > 0 goes to <stem>_i.<ext>
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    /// Raw binned CSV the model claims to describe
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    hmm: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Bin width of the raw trace, microseconds
    #[arg(long, default_value_t = 5000)]
    bin_width_us: u64,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    /// Confidence level for the replicate bands
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 50)]
    max_lag: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output report JSON; exit code 2 if any metric falls outside its band
    #[arg(long)]
    output: PathBuf,
    /// Optional plot-ready CSV: lag,reads_raw,reads_hmm,writes_raw,writes_hmm
    #[arg(long)]
    acf_csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct MapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    hmm: PathBuf,
    /// Bin width in seconds (alternative: --bin-width-us)
    #[arg(long, conflicts_with = "bin_width_us")]
    bin_width_s: Option<f64>,
    /// Bin width in microseconds (alternative: --bin-width-s)
    #[arg(long)]
    bin_width_us: Option<u64>,
    /// Reuse a decoded state CSV instead of decoding internally
    #[arg(long)]
    path: Option<PathBuf>,
    /// Form off-diagonal generator entries from raw transition probabilities
    /// instead of the renormalized jump chain
    #[arg(long)]
    raw_q: bool,
    /// Append an erase state fed from jumps into this (write) state
    #[arg(long)]
    erase_state_from: Option<usize>,
    /// Erase entries per direct write-state entry
    #[arg(long, default_value_t = 0.015625)]
    erase_ratio: f64,
    /// Erase holding time override, seconds
    #[arg(long)]
    erase_holding_s: Option<f64>,
    /// Output JSON: {bin_width_s, A, holding_mean_s, rates, labels}
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SchemeArg {
    /// strict FCFS
    None,
    /// reads overtake the queue but never interrupt service
    Nonpreemptive,
    /// reads also suspend a write/erase in service
    Preemptive,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::None => Scheme::NoPriority,
            SchemeArg::Nonpreemptive => Scheme::NonPreemptiveRead,
            SchemeArg::Preemptive => Scheme::PreemptiveRead,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SpreadArg {
    /// whole bin arrives at the bin's left edge
    BinStart,
    /// each block gets a uniform offset inside its bin
    Uniform,
}

#[derive(Args, Serialize)]
struct QsimArgs {
    /// Binned CSV driving the queue
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5000)]
    bin_width_us: u64,
    /// Priority scheme; ignored (all three run) when --hmm is given
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Read service time, microseconds per block
    #[arg(long)]
    service_read: f64,
    /// Write service time, microseconds per block
    #[arg(long)]
    service_write: f64,
    /// Erase service time, microseconds per erase
    #[arg(long)]
    service_erase: f64,
    /// Inject one erase after every this-many writes
    #[arg(long, default_value_t = 64)]
    erase_per_writes: u64,
    #[arg(long, value_enum, default_value_t = SpreadArg::BinStart)]
    spread: SpreadArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Backlog beyond which an overloaded run is flagged unstable
    #[arg(long, default_value_t = 1_000_000)]
    queue_cap: usize,
    /// Fitted model JSON; together with --clusters switches to raw-vs-model
    /// comparison across all three schemes
    #[arg(long, requires = "clusters")]
    hmm: Option<PathBuf>,
    #[arg(long, requires = "hmm")]
    clusters: Option<PathBuf>,
    /// Replicates for comparison mode
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output report JSON
    #[arg(long)]
    output: PathBuf,
}

/// Forwards warnings from the library (sampling clamps, unstable queues) to
/// stderr.
struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::Level::Warn
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("{}: {}", record.level().to_string().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn main() -> ExitCode {
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(log::LevelFilter::Warn);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version are successes; anything else is an error.
            return if e.exit_code() == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: &Command) -> anyhow::Result<u8> {
    match command {
        Command::Bin(args) => cmd_bin(args),
        Command::Thin(args) => cmd_thin(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Map(args) => cmd_map(args),
        Command::Qsim(args) => cmd_qsim(args),
    }
}

// ---------- shared file helpers ----------

fn params<T: Serialize>(args: &T) -> anyhow::Result<serde_json::Value> {
    Ok(serde_json::to_value(args)?)
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("create {}", path.display()))?,
    ))
}

/// Binned CSVs do not carry the bin width; the caller stamps it (width 1 is
/// used where only the counts matter).
fn read_binned(path: &Path, bin_width_us: u64) -> anyhow::Result<BinnedTrace> {
    let bins =
        read_binned_csv(open(path)?).with_context(|| format!("parse {}", path.display()))?;
    Ok(BinnedTrace::new(bin_width_us, bins))
}

fn write_binned(path: &Path, binned: &BinnedTrace) -> anyhow::Result<()> {
    let mut w = create(path)?;
    write_binned_csv(&mut w, binned)?;
    Ok(w.flush()?)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    serde_json::from_reader(open(path)?).with_context(|| format!("parse {}", path.display()))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(w.flush()?)
}

fn load_hmm(path: &Path) -> anyhow::Result<Hmm> {
    let hmm: Hmm = load_json(path)?;
    hmm.validate().with_context(|| format!("{} is not a valid model", path.display()))?;
    Ok(hmm)
}

fn load_clusters(path: &Path) -> anyhow::Result<ClusterModel> {
    let model: ClusterModel = load_json(path)?;
    model
        .validate()
        .with_context(|| format!("{} is not a valid cluster model", path.display()))?;
    Ok(model)
}

fn parse_index_list(s: &str, what: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|f| f.trim().parse::<usize>().with_context(|| format!("bad {what} entry {f:?}")))
        .collect()
}

/// Reads a decoded state CSV (`bin_index,state`, header optional, indices
/// contiguous from zero).
fn read_state_csv(path: &Path) -> anyhow::Result<Vec<usize>> {
    let mut states = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line == "bin_index,state") {
            continue;
        }
        let (i, s) = line
            .split_once(',')
            .with_context(|| format!("{}:{}: expected bin_index,state", path.display(), idx + 1))?;
        let i: usize = i.trim().parse()?;
        if i != states.len() {
            bail!("{}:{}: bin index {} out of order", path.display(), idx + 1, i);
        }
        states.push(s.trim().parse::<usize>()?);
    }
    Ok(states)
}

// ---------- subcommands ----------

fn cmd_bin(args: &BinArgs) -> anyhow::Result<u8> {
    let records = parse_trace(open(&args.input)?)
        .with_context(|| format!("parse {}", args.input.display()))?;
    let binned = bin_trace(&records, args.bin_width_us)?;
    write_binned(&args.output, &binned)?;
    eprintln!(
        "binned {} records into {} bins of {} us",
        records.len(),
        binned.len(),
        args.bin_width_us
    );
    write_manifest(&args.output, &[&args.input], &[&args.output], None, params(args)?)?;
    Ok(0)
}

fn cmd_thin(args: &ThinArgs) -> anyhow::Result<u8> {
    let keep: BTreeSet<usize> = parse_index_list(&args.keep, "--keep")?.into_iter().collect();
    let binned = read_binned(&args.input, 1)?;
    let thinned = thin_periodic(&binned, args.period, &keep)?;
    write_binned(&args.output, &thinned)?;
    eprintln!(
        "kept {} of every {} bins: {} -> {} bins",
        keep.len(),
        args.period,
        binned.len(),
        thinned.len()
    );
    write_manifest(&args.output, &[&args.input], &[&args.output], None, params(args)?)?;
    Ok(0)
}

fn cmd_cluster(args: &ClusterArgs) -> anyhow::Result<u8> {
    let mode = match args.mode {
        ModeArg::Joint => {
            let k = args.k.context("--mode joint requires --k")?;
            if args.kr.is_some() || args.kw.is_some() {
                bail!("--kr/--kw only apply to --mode product");
            }
            ClusterMode::Joint2D { k }
        }
        ModeArg::Product => {
            if args.k.is_some() {
                bail!("--k only applies to --mode joint");
            }
            ClusterMode::PerDimensionProduct {
                k_r: args.kr.context("--mode product requires --kr")?,
                k_w: args.kw.context("--mode product requires --kw")?,
            }
        }
    };
    let binned = read_binned(&args.input, 1)?;
    let model = fit_clusters(&binned, mode, args.zero_singleton, args.seed)?;
    save_json(&args.output, &model)?;
    eprintln!("fitted {} clusters over {} bins", model.clusters.len(), binned.len());
    write_manifest(&args.output, &[&args.input], &[&args.output], Some(args.seed), params(args)?)?;
    Ok(0)
}

fn cmd_fit(args: &FitArgs) -> anyhow::Result<u8> {
    let binned = read_binned(&args.input, 1)?;
    let clusters = load_clusters(&args.clusters)?;
    let obs = observation_sequence(&clusters, &binned);
    let fit = baum_welch(
        &obs,
        args.states,
        FitInit::Seed { seed: args.seed, restarts: args.restarts },
        &FitOptions { tol: args.tol, max_iter: args.max_iter },
    )?;
    save_json(&args.output, &fit.hmm)?;

    let mut outputs: Vec<&Path> = vec![&args.output];
    if let Some(traj_path) = &args.trajectory {
        let mut w = create(traj_path)?;
        writeln!(w, "iteration,log_likelihood")?;
        for (i, ll) in fit.trajectory.iter().enumerate() {
            writeln!(w, "{i},{ll}")?;
        }
        w.flush()?;
        outputs.push(traj_path);
    }
    for d in &fit.degenerate {
        eprintln!(
            "warning: state {} lost all posterior mass at iteration {} and was re-seeded",
            d.state, d.iteration
        );
    }
    eprintln!(
        "fitted r={} in {} iterations, log likelihood {:.6}",
        args.states, fit.iterations, fit.final_log_likelihood
    );
    write_manifest(
        &args.output,
        &[&args.input, &args.clusters],
        &outputs,
        Some(args.seed),
        params(args)?,
    )?;
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<u8> {
    let r_values = parse_index_list(&args.states, "--states")?;
    if r_values.is_empty() {
        bail!("--states must name at least one state count");
    }
    let binned = read_binned(&args.input, 1)?;
    let clusters = load_clusters(&args.clusters)?;
    let obs = observation_sequence(&clusters, &binned);
    let entries = sweep_states(
        &obs,
        &r_values,
        args.seed,
        args.restarts,
        &FitOptions { tol: args.tol, max_iter: args.max_iter },
    )?;

    let mut w = create(&args.output)?;
    writeln!(w, "r,log_likelihood,iterations,duplicate_pairs")?;
    for e in &entries {
        let pairs: Vec<String> =
            e.duplicate_pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        writeln!(w, "{},{},{},{}", e.r, e.log_likelihood, e.iterations, pairs.join(";"))?;
        if !pairs.is_empty() {
            eprintln!("r={}: near-duplicate state pairs {}", e.r, pairs.join(" "));
        }
    }
    w.flush()?;
    write_manifest(
        &args.output,
        &[&args.input, &args.clusters],
        &[&args.output],
        Some(args.seed),
        params(args)?,
    )?;
    Ok(0)
}

fn cmd_decode(args: &DecodeArgs) -> anyhow::Result<u8> {
    let binned = read_binned(&args.input, 1)?;
    let clusters = load_clusters(&args.clusters)?;
    let hmm = load_hmm(&args.hmm)?;
    let obs = observation_sequence(&clusters, &binned);
    let path = viterbi(&hmm, &obs)?;

    let mut w = create(&args.output)?;
    writeln!(w, "bin_index,state")?;
    for (i, s) in path.states.iter().enumerate() {
        writeln!(w, "{i},{s}")?;
    }
    w.flush()?;
    eprintln!("decoded {} bins, path log probability {:.6}", path.states.len(), path.max_log_posterior);
    write_manifest(
        &args.output,
        &[&args.input, &args.clusters, &args.hmm],
        &[&args.output],
        None,
        params(args)?,
    )?;
    Ok(0)
}

/// Replicate 0 keeps the given name; later ones get `_i` before the
/// extension.
fn replicate_path(base: &Path, index: usize) -> PathBuf {
    if index == 0 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{index}.{ext}"),
        None => format!("{stem}_{index}"),
    };
    base.with_file_name(name)
}

fn cmd_gen(args: &GenArgs) -> anyhow::Result<u8> {
    if args.replicates == 0 {
        bail!("--replicates must be at least 1");
    }
    let hmm = load_hmm(&args.hmm)?;
    let clusters = load_clusters(&args.clusters)?;
    let seeds = replicate_seeds(args.seed, args.replicates);
    let paths: Vec<PathBuf> = (0..args.replicates).map(|i| replicate_path(&args.output, i)).collect();

    // Replicates are independent; spread them across threads and surface the
    // first failure.
    std::thread::scope(|scope| -> anyhow::Result<()> {
        let mut handles = Vec::with_capacity(args.replicates);
        for (seed, path) in seeds.iter().zip(&paths) {
            let (hmm, clusters) = (&hmm, &clusters);
            handles.push(scope.spawn(move || -> anyhow::Result<()> {
                let cfg = GenConfig {
                    length: args.length,
                    seed: *seed,
                    bin_width_us: args.bin_width_us,
                    max_rejections: args.max_rejections,
                };
                write_binned(path, &generate_trace(hmm, clusters, &cfg)?)
            }));
        }
        for handle in handles {
            handle.join().expect("generator thread panicked")?;
        }
        Ok(())
    })?;

    eprintln!("generated {} replicate(s) of {} bins", args.replicates, args.length);
    let outputs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &args.output,
        &[&args.hmm, &args.clusters],
        &outputs,
        Some(args.seed),
        params(args)?,
    )?;
    Ok(0)
}

fn cmd_validate(args: &ValidateArgs) -> anyhow::Result<u8> {
    let binned = read_binned(&args.input, args.bin_width_us)?;
    let hmm = load_hmm(&args.hmm)?;
    let clusters = load_clusters(&args.clusters)?;
    let report = validate_fidelity(
        &binned,
        &hmm,
        &clusters,
        args.replicates,
        args.level,
        args.max_lag,
        args.seed,
    )?;
    save_json(&args.output, &report)?;

    let mut outputs: Vec<&Path> = vec![&args.output];
    if let Some(acf_path) = &args.acf_csv {
        let mut w = create(acf_path)?;
        writeln!(w, "lag,reads_raw,reads_hmm,writes_raw,writes_hmm")?;
        let cell = |v: &[f64], i: usize| v.get(i).map(|x| x.to_string()).unwrap_or_default();
        for lag in 0..=report.acf.max_lag {
            writeln!(
                w,
                "{lag},{},{},{},{}",
                cell(&report.acf.reads_raw, lag),
                cell(&report.acf.reads_hmm, lag),
                cell(&report.acf.writes_raw, lag),
                cell(&report.acf.writes_hmm, lag)
            )?;
        }
        w.flush()?;
        outputs.push(acf_path);
    }
    write_manifest(
        &args.output,
        &[&args.input, &args.hmm, &args.clusters],
        &outputs,
        Some(args.seed),
        params(args)?,
    )?;

    if report.passed {
        eprintln!(
            "validation passed: {} metrics inside their {}% bands",
            report.metrics.len(),
            args.level * 100.0
        );
        Ok(0)
    } else {
        eprintln!("validation flagged: {}", report.flagged.join(", "));
        Ok(2)
    }
}

fn cmd_map(args: &MapArgs) -> anyhow::Result<u8> {
    let bin_width_s = match (args.bin_width_s, args.bin_width_us) {
        (Some(s), None) => s,
        (None, Some(us)) => us as f64 / 1e6,
        (None, None) => bail!("one of --bin-width-s or --bin-width-us is required"),
        (Some(_), Some(_)) => unreachable!("clap rejects the conflict"),
    };
    let binned = read_binned(&args.input, (bin_width_s * 1e6).round().max(1.0) as u64)?;
    let clusters = load_clusters(&args.clusters)?;
    let hmm = load_hmm(&args.hmm)?;

    let mut inputs: Vec<&Path> = vec![&args.input, &args.clusters, &args.hmm];
    let path = match &args.path {
        Some(p) => {
            inputs.push(p);
            read_state_csv(p)?
        }
        None => {
            let obs = observation_sequence(&clusters, &binned);
            viterbi(&hmm, &obs)?.states
        }
    };

    let variant = if args.raw_q { GeneratorVariant::RawQ } else { GeneratorVariant::Renormalized };
    let mut map = derive_map(&binned, &path, &hmm.q, bin_width_s, variant)?;
    if let Some(write_state) = args.erase_state_from {
        map = add_erase_state(&map, write_state, args.erase_ratio, args.erase_holding_s)?;
    }
    save_json(&args.output, &map)?;

    // Diagnostic: measured sojourns vs the geometric prediction from the
    // transition diagonal.
    let runs = run_lengths(&path, hmm.r);
    let geometric = geometric_run_lengths(&hmm.q);
    for i in 0..hmm.r {
        let measured = runs.mean_run[i]
            .map(|m| format!("{m:.1}"))
            .unwrap_or_else(|| "absent".to_string());
        eprintln!(
            "state {i}: measured mean run {measured} bins over {} runs, geometric 1/(1-q) {:.1}",
            runs.run_counts[i], geometric[i]
        );
    }
    write_manifest(&args.output, &inputs, &[&args.output], None, params(args)?)?;
    Ok(0)
}

fn cmd_qsim(args: &QsimArgs) -> anyhow::Result<u8> {
    let binned = read_binned(&args.input, args.bin_width_us)?;
    let cfg = QueueSimConfig {
        service: ServiceTimes {
            read_us: args.service_read,
            write_us: args.service_write,
            erase_us: args.service_erase,
        },
        scheme: args.scheme.map(Scheme::from).unwrap_or(Scheme::NoPriority),
        erase_per_writes: args.erase_per_writes,
        arrival_spread: match args.spread {
            SpreadArg::BinStart => ArrivalSpread::BinStart,
            SpreadArg::Uniform => ArrivalSpread::UniformInBin,
        },
        seed: args.seed,
        queue_cap: args.queue_cap,
    };

    let code = match &args.hmm {
        None => {
            let scheme =
                args.scheme.context("--scheme is required unless --hmm/--clusters are given")?;
            let _ = scheme;
            let report = simulate_queue(&binned, &cfg)?;
            save_json(&args.output, &report)?;
            eprintln!(
                "offered load {:.3}, utilization {:.3}{}",
                report.offered_load,
                report.utilization,
                if report.unstable { " (unstable)" } else { "" }
            );
            write_manifest(
                &args.output,
                &[&args.input],
                &[&args.output],
                Some(args.seed),
                params(args)?,
            )?;
            0
        }
        Some(hmm_path) => {
            let clusters_path = args.clusters.as_ref().expect("clap enforces --clusters");
            let hmm = load_hmm(hmm_path)?;
            let clusters = load_clusters(clusters_path)?;
            let cmp = compare_raw_vs_hmm(&binned, &hmm, &clusters, &cfg, args.replicates, args.level)?;
            save_json(&args.output, &cmp)?;
            write_manifest(
                &args.output,
                &[&args.input, hmm_path, clusters_path],
                &[&args.output],
                Some(args.seed),
                params(args)?,
            )?;
            // Reads queue for far less than a bin width under the priority
            // schemes, so only write/erase bands gate the exit code.
            let mut flagged = Vec::new();
            for scheme in &cmp.schemes {
                for class in &scheme.classes {
                    if class.class != "read" && class.inside == Some(false) {
                        flagged.push(format!("{:?}/{}", scheme.scheme, class.class));
                    }
                }
            }
            if flagged.is_empty() {
                eprintln!("raw write/erase queueing inside the model bands for all schemes");
                0
            } else {
                eprintln!("queueing comparison flagged: {}", flagged.join(", "));
                2
            }
        }
    };
    Ok(code)
}
