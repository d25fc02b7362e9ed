use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use timewarp::harness::{emit_csv, run_experiment, write_csv, HarnessError, RunConfig, RunProtocol};
use timewarp::{ConfigError, PholdConfig};

/// Runs the memory-allocating PHOLD benchmark on the Time Warp kernel.
#[derive(Debug, Parser)]
#[command(name = "timewarp", version)]
struct Args {
    /// GVT protocol: wf (wait-free), fh (critical section) or serial.
    #[arg(long, default_value = "wf", value_parser = ["wf", "fh", "serial"])]
    protocol: String,

    #[arg(long, default_value_t = 1)]
    workers: usize,

    /// Number of LPs; overrides the config file.
    #[arg(long)]
    lps: Option<u32>,

    #[arg(long, default_value_t = 1000)]
    gvt_interval_ms: u64,

    /// Virtual end time; overrides the config file.
    #[arg(long)]
    t_end: Option<f64>,

    /// PHOLD seed of the first repetition; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,

    /// Busy-loop processes to run alongside the simulation.
    #[arg(long, default_value_t = 0)]
    interference: usize,

    /// Step workers cooperatively, sweep for GVT safety and compare the
    /// result with a sequential run.
    #[arg(long)]
    audit: bool,

    #[arg(long, default_value_t = 1)]
    reps: u32,

    /// Take a state snapshot every this many events per LP.
    #[arg(long, default_value_t = 1)]
    checkpoint_interval: u32,

    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,

    /// TOML file with PHOLD parameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build(args: &Args) -> Result<RunConfig, ConfigError> {
    let mut phold = match &args.config {
        Some(p) => PholdConfig::load(p)?,
        None => PholdConfig::default(),
    };
    if let Some(n) = args.lps {
        phold.num_lps = n;
    }
    if let Some(t) = args.t_end {
        phold.t_end = t;
    }
    if let Some(s) = args.seed {
        phold.seed = s;
    }
    let cfg = RunConfig {
        protocol: args.protocol.parse()?,
        workers: args.workers,
        gvt_interval: Duration::from_millis(args.gvt_interval_ms),
        phold,
        interference: args.interference,
        audit: args.audit,
        repetitions: args.reps,
        checkpoint_interval: args.checkpoint_interval,
    };
    cfg.validate()?;
    if cfg.audit && cfg.protocol == RunProtocol::Serial {
        return Err(ConfigError::Invalid("--audit needs a parallel protocol".into()));
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<(), HarnessError> {
    let cfg = build(args)?;
    let runs = run_experiment(&cfg)?;
    for m in &runs {
        eprintln!(
            "{} workers={} seed={}: {:.3} s, {} committed, {} rollbacks, {} GVT rounds",
            m.protocol, m.workers, m.seed, m.wall_clock_s, m.committed_events, m.rollbacks, m.gvt_rounds
        );
    }
    match &args.out {
        Some(p) => emit_csv(&runs, p)?,
        None => write_csv(&runs, std::io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
