mod config;
mod error;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moeplan_core::pipeline::{
    build_plans, profile_traces, run_simulation, PlanArtifact, PlanConfig, Profile, ReplicaArtifact,
};
use moeplan_core::simulator::compare;
use moeplan_core::trace::{generate_synthetic_trace, load_trace, save_trace, TraceFormat};
use moeplan_core::{ReplicationMode, RoutingTrace, SimOptions, SimReport, SyntheticSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{RatioSetting, RunConfig, TopologySetting};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "moeplan",
    version,
    about = "Affinity-aware expert placement planning and simulation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all subcommands; they override the config file.
#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration (dotted keys, e.g. `grouping.mode = "hierarchical"`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cluster shape as NODESxGPUS, e.g. 2x4.
    #[arg(long, global = true)]
    topology: Option<String>,
    /// vanilla_contiguous | uniform_spectral | controlled | fully_non_uniform | hierarchical
    #[arg(long, global = true)]
    grouping: Option<String>,
    /// none | fixed_one | dynamic | every_gpu_hot | every_gpu_collaborative
    #[arg(long, global = true)]
    replication: Option<String>,
    /// wrr | tar
    #[arg(long, global = true)]
    routing: Option<String>,
    /// Non-uniformity ratio, or "auto" for knee selection.
    #[arg(long, global = true)]
    ratio: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic block-structured routing trace (JSONL).
    GenTrace(GenTraceArgs),
    /// Build per-layer affinity and load statistics from one or more traces.
    Profile(ProfileArgs),
    /// Compute a placement plan and a replica plan from a profile.
    Plan(PlanArgs),
    /// Replay a trace against plans and report transfers and load balance.
    Simulate(SimulateArgs),
    /// Tabulate reports against a baseline (text to stdout, CSV to --out).
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct GenTraceArgs {
    /// olmoe | deepseek_v2_lite | qwen3_30b
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Token count; defaults to batch × (prefill + decode).
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    prefill: Option<usize>,
    #[arg(long)]
    decode: Option<usize>,
    /// Number of co-activation blocks per layer.
    #[arg(long)]
    blocks: Option<usize>,
    /// Probability that a selection comes from the token's home block.
    #[arg(long)]
    within_block_prob: Option<f64>,
    /// Zipf exponent of block and within-block popularity.
    #[arg(long)]
    skew: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Traces of identical shape; their statistics are summed.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlanArgs {
    profile: PathBuf,
    /// Placement plan output.
    #[arg(long)]
    out: PathBuf,
    /// Replica plan output; defaults to `<out stem>.replicas.json`.
    #[arg(long)]
    replicas_out: Option<PathBuf>,
    /// Experts per layer copied by the every_gpu_* modes.
    #[arg(long)]
    every_gpu_count: Option<usize>,
    /// group_load | hot_load
    #[arg(long)]
    share: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    trace: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Defaults to `<plan stem>.replicas.json`.
    #[arg(long)]
    replicas: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-layer statistics as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Row label used by `compare`.
    #[arg(long)]
    name: Option<String>,
    /// Count the combine phase as well as dispatch.
    #[arg(long)]
    include_combine: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Index of the baseline report.
    #[arg(long, default_value_t = 0)]
    baseline: usize,
    /// CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_common(&mut config, &cli.common);
    match cli.command {
        Command::GenTrace(args) => gen_trace(config, args),
        Command::Profile(args) => profile(args),
        Command::Plan(args) => plan(config, args),
        Command::Simulate(args) => simulate(config, args),
        Command::Compare(args) => compare_reports(args),
    }
}

fn apply_common(config: &mut RunConfig, c: &Common) {
    if c.seed.is_some() {
        config.seed = c.seed;
    }
    if let Some(t) = &c.topology {
        config.topology = Some(TopologySetting::Text(t.clone()));
    }
    if c.grouping.is_some() {
        config.grouping.mode = c.grouping.clone();
    }
    if let Some(r) = &c.ratio {
        config.grouping.ratio = Some(RatioSetting::Text(r.clone()));
    }
    if c.replication.is_some() {
        config.replication.mode = c.replication.clone();
    }
    if c.routing.is_some() {
        config.routing.policy = c.routing.clone();
    }
}

fn gen_trace(mut config: RunConfig, a: GenTraceArgs) -> Result<(), CliError> {
    let m = &mut config.model;
    m.preset = a.preset.or(m.preset.take());
    m.layers = a.layers.or(m.layers);
    m.experts = a.experts.or(m.experts);
    m.top_k = a.top_k.or(m.top_k);
    let w = &mut config.workload;
    w.num_tokens = a.tokens.or(w.num_tokens);
    w.batch = a.batch.or(w.batch);
    w.prefill = a.prefill.or(w.prefill);
    w.decode = a.decode.or(w.decode);
    let s = &config.synthetic;
    let spec = SyntheticSpec {
        shape: config.shape()?,
        num_tokens: config.num_tokens(),
        num_blocks: a.blocks.or(s.blocks).unwrap_or(4),
        within_block_prob: a.within_block_prob.or(s.within_block_prob).unwrap_or(0.9),
        popularity_skew: a.skew.or(s.popularity_skew).unwrap_or(0.8),
        seed: config.seed(),
    };
    let trace = generate_synthetic_trace(&spec)?;
    let file = create(&a.out)?;
    save_trace(&trace, BufWriter::new(file))?;
    log::info!(
        "wrote {} records to {}",
        trace.num_records(),
        a.out.display()
    );
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<(), CliError> {
    let traces = a
        .traces
        .iter()
        .map(|p| read_trace(p))
        .collect::<Result<Vec<_>, _>>()?;
    let profile = profile_traces(&traces)?;
    write_json(&a.out, &profile)
}

fn plan(mut config: RunConfig, a: PlanArgs) -> Result<(), CliError> {
    if a.every_gpu_count.is_some() {
        config.replication.every_gpu_count = a.every_gpu_count;
    }
    if a.share.is_some() {
        config.replication.share = a.share.clone();
    }
    let profile: Profile = read_json(&a.profile)?;
    let plan_config = PlanConfig {
        topology: config.topology()?,
        grouping: config.grouping_mode()?,
        ratio: config.ratio()?,
        replication: config.replication()?,
        seed: config.seed(),
    };
    let (placement, replicas) = build_plans(&profile, &plan_config)?;
    for d in &placement.placement.ratio_selection {
        if let Some(sel) = &d.selection {
            log::info!(
                "layer {} node {:?}: knee at r = {} (index {}{})",
                d.layer,
                d.node,
                d.ratio,
                sel.chosen,
                if sel.degenerate { ", degenerate" } else { "" }
            );
        }
    }
    write_json(&a.out, &placement)?;
    let replicas_out = a
        .replicas_out
        .unwrap_or_else(|| sibling(&a.out, "replicas.json"));
    write_json(&replicas_out, &replicas)
}

fn simulate(config: RunConfig, a: SimulateArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.trace)?;
    let placement: PlanArtifact = read_json(&a.plan)?;
    let replicas_path = a
        .replicas
        .unwrap_or_else(|| sibling(&a.plan, "replicas.json"));
    let replicas: ReplicaArtifact = read_json(&replicas_path)?;
    let policy = config.routing()?;
    if config.routing.policy.is_some() && replicas.options.mode == ReplicationMode::None {
        log::warn!(
            "routing policy {} has no effect without replication",
            policy.name()
        );
    }
    let mut options = SimOptions::new(policy, config.seed());
    options.include_combine =
        a.include_combine || config.simulation.include_combine.unwrap_or(false);
    let report = run_simulation(&trace, &placement, &replicas, &options, a.name.as_deref())?;
    write_json(&a.out, &report)?;
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv())?;
    }
    Ok(())
}

fn compare_reports(a: CompareArgs) -> Result<(), CliError> {
    let reports = a
        .reports
        .iter()
        .map(|p| read_json::<SimReport>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = compare(&reports, a.baseline)?;
    print!("{}", table.to_text());
    if let Some(out) = &a.out {
        write_text(out, &table.to_csv())?;
    }
    Ok(())
}

/// `dir/stem.json` → `dir/stem.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::io(path, e))
}

fn read_trace(path: &Path) -> Result<RoutingTrace, CliError> {
    Ok(load_trace(open(path)?, TraceFormat::Jsonl)?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::json(path, e))?;
    w.write_all(b"\n")
        .and_then(|()| w.flush())
        .map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
