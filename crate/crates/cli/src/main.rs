//! `liveput` command-line driver.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Spot-instance training planner and simulator.
#[derive(Debug, Parser)]
#[command(name = "liveput", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay a trace under one or more policies and seeds.
    Simulate(SimulateArgs),
    /// Forecast availability from the end of a trace.
    Predict(PredictArgs),
    /// Plan configurations over a known or forecast availability sequence.
    Optimize(OptimizeArgs),
    /// Generate a synthetic interval series.
    GenTrace(GenTraceArgs),
    /// GPU-time breakdown of several policies across several traces.
    Compare(CompareArgs),
}

/// Trace selection shared by the commands that read one.
#[derive(Debug, Clone, Args)]
struct TraceArgs {
    /// Interval-series CSV, event-trace CSV, `synthetic:key=value,...` or
    /// `bursty:key=value,...`.
    #[arg(long)]
    trace: String,
    /// Interval length in seconds; overrides the sidecar.
    #[arg(long)]
    interval_seconds: Option<f64>,
    /// Cluster capacity; overrides the sidecar.
    #[arg(long)]
    capacity: Option<u32>,
}

/// Workload and planner settings.
#[derive(Debug, Clone, Args)]
struct ModelArgs {
    /// Profile JSON path or `builtin:<name>`.
    #[arg(long, default_value = "builtin:gpt2")]
    profile: String,
    /// Cost table JSON; defaults to the built-in table.
    #[arg(long)]
    cost_table: Option<PathBuf>,
    /// Monte-Carlo trials for large scenario spaces.
    #[arg(long, default_value_t = liveput::preemption::DEFAULT_MC_TRIALS)]
    mc_trials: u32,
    /// Intervals the planner looks ahead.
    #[arg(long, default_value_t = 12)]
    lookahead: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated policies, e.g. `proactive,reactive,checkpoint:5`.
    #[arg(long, default_value = "proactive,reactive")]
    policies: String,
    /// `a..b` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Intervals of history the forecaster sees.
    #[arg(long, default_value_t = 12)]
    history: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, default_value_t = 12)]
    history: usize,
    #[arg(long, default_value_t = 12)]
    lookahead: usize,
    /// Forecast method, or `all`.
    #[arg(long, default_value = "arima")]
    method: String,
    /// Forecast from the history ending just before this interval; defaults
    /// to the end of the trace.
    #[arg(long)]
    at: Option<usize>,
    /// Score every sliding window instead of forecasting once.
    #[arg(long)]
    evaluate: bool,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated counts: current interval first, then the future.
    #[arg(long, conflicts_with = "trace")]
    availability: Option<String>,
    /// Take the counts from a trace starting at `--at`.
    #[arg(long)]
    trace: Option<String>,
    #[arg(long, default_value_t = 0)]
    at: usize,
    #[arg(long)]
    interval_seconds: Option<f64>,
    #[arg(long)]
    capacity: Option<u32>,
    /// Current configuration as `DxP`, or `none`.
    #[arg(long, default_value = "none")]
    current: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenTraceArgs {
    /// `synthetic:key=value,...` or `bursty:key=value,...`.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    interval_seconds: Option<f64>,
    /// Fold the generated single-GPU events into instances of this many GPUs.
    #[arg(long)]
    gpus_per_instance: Option<u32>,
    /// Output CSV; a JSON sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Traces; repeat the flag or separate with `;`.
    #[arg(long = "trace", value_delimiter = ';', required = true)]
    traces: Vec<String>,
    #[arg(long)]
    interval_seconds: Option<f64>,
    #[arg(long)]
    capacity: Option<u32>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "proactive,proactive_ideal,reactive,checkpoint")]
    policies: String,
    #[arg(long, default_value = "1")]
    seeds: String,
    #[arg(long, default_value_t = 12)]
    history: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes, mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Input(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::GenTrace(a) => commands::gen_trace(a),
        Command::Compare(a) => commands::compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Input(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
