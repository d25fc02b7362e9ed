//! Experiment driver: runs PHOLD under a chosen GVT protocol (or serially),
//! optionally next to CPU-bound interference, and records metrics as CSV.

use std::io;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, KernelError};
use crate::kernel::{Engine, EngineConfig, GvtProtocol, RunOutcome, Trigger};
use crate::oracle::run_sequential;
use crate::phold::{PholdConfig, PholdModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunProtocol {
    Wf,
    Fh,
    Serial,
}

impl RunProtocol {
    pub fn gvt(self) -> Option<GvtProtocol> {
        match self {
            RunProtocol::Wf => Some(GvtProtocol::WaitFree),
            RunProtocol::Fh => Some(GvtProtocol::Fh),
            RunProtocol::Serial => None,
        }
    }
}

impl std::fmt::Display for RunProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunProtocol::Wf => "wf",
            RunProtocol::Fh => "fh",
            RunProtocol::Serial => "serial",
        })
    }
}

impl std::str::FromStr for RunProtocol {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "wf" => Ok(RunProtocol::Wf),
            "fh" => Ok(RunProtocol::Fh),
            "serial" => Ok(RunProtocol::Serial),
            _ => Err(ConfigError::Invalid(format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocol: RunProtocol,
    pub workers: usize,
    pub gvt_interval: Duration,
    pub phold: PholdConfig,
    pub interference: usize,
    /// Run under the cooperative scheduler with stop-the-world GVT sweeps and
    /// compare the committed events with the sequential oracle.
    pub audit: bool,
    pub repetitions: u32,
    pub checkpoint_interval: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            protocol: RunProtocol::Wf,
            workers: 1,
            gvt_interval: Duration::from_millis(1000),
            phold: PholdConfig::default(),
            interference: 0,
            audit: false,
            repetitions: 1,
            checkpoint_interval: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers < 1 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.repetitions < 1 {
            return Err(ConfigError::Invalid("repetitions must be at least 1".into()));
        }
        if self.checkpoint_interval < 1 {
            return Err(ConfigError::Invalid("checkpoint interval must be at least 1".into()));
        }
        if self.gvt_interval.is_zero() {
            return Err(ConfigError::Invalid("GVT interval must be positive".into()));
        }
        self.phold.validate()
    }

    /// Worker count actually used: serial runs always have one.
    pub fn effective_workers(&self) -> usize {
        match self.protocol {
            RunProtocol::Serial => 1,
            _ => self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub protocol: RunProtocol,
    pub workers: usize,
    pub interference: usize,
    pub seed: u64,
    pub wall_clock_s: f64,
    pub committed_events: u64,
    pub executed_events: u64,
    pub rollbacks: u64,
    pub gvt_rounds: u64,
    pub gvt_values: Vec<f64>,
    pub spin_tries: u64,
    pub per_worker_throughput: Vec<f64>,
    pub efficiency: f64,
    pub safety_violations: u64,
    pub sweep_violations: u64,
}

impl RunMetrics {
    pub fn spin_tries_per_second(&self) -> f64 {
        if self.wall_clock_s > 0.0 {
            self.spin_tries as f64 / self.wall_clock_s
        } else {
            0.0
        }
    }

    fn from_outcome(cfg: &RunConfig, seed: u64, o: &RunOutcome) -> Self {
        let secs = o.wall_clock.as_secs_f64();
        RunMetrics {
            protocol: cfg.protocol,
            workers: cfg.effective_workers(),
            interference: cfg.interference,
            seed,
            wall_clock_s: secs,
            committed_events: o.committed_events(),
            executed_events: o.executed(),
            rollbacks: o.rollbacks(),
            gvt_rounds: o.gvt_values.len() as u64,
            gvt_values: o.gvt_values.iter().map(|g| g.as_f64()).collect(),
            spin_tries: o.spin_tries,
            per_worker_throughput: o
                .stats
                .iter()
                .map(|s| if secs > 0.0 { s.executed as f64 / secs } else { 0.0 })
                .collect(),
            efficiency: o.efficiency(),
            safety_violations: o.safety_violations,
            sweep_violations: o.sweep_violations,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub protocol: RunProtocol,
    pub workers: usize,
    pub interference: usize,
    pub seed: u64,
    pub wall_clock_s: f64,
    pub committed_events: u64,
    pub rollbacks: u64,
    pub gvt_rounds: u64,
    pub spin_tries: u64,
    pub efficiency: f64,
}

impl From<&RunMetrics> for CsvRow {
    fn from(m: &RunMetrics) -> Self {
        CsvRow {
            protocol: m.protocol,
            workers: m.workers,
            interference: m.interference,
            seed: m.seed,
            wall_clock_s: m.wall_clock_s,
            committed_events: m.committed_events,
            rollbacks: m.rollbacks,
            gvt_rounds: m.gvt_rounds,
            spin_tries: m.spin_tries,
            efficiency: m.efficiency,
        }
    }
}

pub const CSV_HEADER: &str =
    "protocol,workers,interference,seed,wall_clock_s,committed_events,rollbacks,gvt_rounds,spin_tries,efficiency";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    /// An audited run broke a safety or equivalence property.
    #[error("audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Interference(#[from] InterferenceError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit status: 2 for bad configuration, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub fn emit_csv(metrics: &[RunMetrics], path: &Path) -> Result<(), HarnessError> {
    write_csv(metrics, std::fs::File::create(path)?)
}

pub fn write_csv(metrics: &[RunMetrics], out: impl io::Write) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for m in metrics {
        w.serialize(CsvRow::from(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Runs one repetition with the given PHOLD seed.
pub fn run_once(cfg: &RunConfig, seed: u64) -> Result<RunMetrics, HarnessError> {
    cfg.validate()?;
    let phold = PholdConfig {
        seed,
        ..cfg.phold.clone()
    };
    let model = Arc::new(PholdModel::new(phold.clone())?);

    let Some(protocol) = cfg.protocol.gvt() else {
        let start = Instant::now();
        let trace = run_sequential(&*model, phold.t_end());
        let secs = start.elapsed().as_secs_f64();
        let n = trace.events.len() as u64;
        return Ok(RunMetrics {
            protocol: cfg.protocol,
            workers: 1,
            interference: cfg.interference,
            seed,
            wall_clock_s: secs,
            committed_events: n,
            executed_events: n,
            rollbacks: 0,
            gvt_rounds: 0,
            gvt_values: Vec::new(),
            spin_tries: 0,
            per_worker_throughput: vec![if secs > 0.0 { n as f64 / secs } else { 0.0 }],
            efficiency: 1.0,
            safety_violations: 0,
            sweep_violations: 0,
        });
    };

    let engine = Engine::new(
        Arc::clone(&model),
        EngineConfig {
            workers: cfg.workers,
            protocol,
            trigger: Trigger::Interval(cfg.gvt_interval),
            t_end: phold.t_end(),
            checkpoint_interval: cfg.checkpoint_interval,
            record_commits: cfg.audit,
            audit: cfg.audit,
            hook: None,
        },
    );
    let outcome = if cfg.audit {
        engine.into_scheduler(seed).run(u64::MAX)?
    } else {
        engine.run_threaded()?
    };
    let metrics = RunMetrics::from_outcome(cfg, seed, &outcome);

    if cfg.audit {
        audit(&model, &phold, &outcome)?;
    }
    Ok(metrics)
}

fn audit(model: &PholdModel, phold: &PholdConfig, o: &RunOutcome) -> Result<(), HarnessError> {
    let fail = |m: String| Err(HarnessError::Audit(m));
    if o.safety_violations > 0 {
        return fail(format!("{} rollbacks below GVT", o.safety_violations));
    }
    if o.sweep_violations > 0 {
        return fail(format!("{} GVT sweeps found pending work below GVT", o.sweep_violations));
    }
    if !o.gvt_monotone() || o.gvt_regressions > 0 {
        return fail("GVT sequence decreased".into());
    }
    if o.gvt_disagreements > 0 {
        return fail(format!("{} rounds with disagreeing GVT values", o.gvt_disagreements));
    }
    let trace = run_sequential(model, phold.t_end());
    if o.committed.as_deref() != Some(&trace.sorted()[..]) {
        return fail("committed events differ from the sequential run".into());
    }
    if o.checksums != trace.checksums {
        return fail("final LP states differ from the sequential run".into());
    }
    Ok(())
}

/// Runs every repetition, with PHOLD seed `phold.seed + rep`, while
/// `interference` busy-loop processes compete for the CPUs.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<RunMetrics>, HarnessError> {
    cfg.validate()?;
    let _load = Interference::spawn(cfg.interference)?;
    (0..u64::from(cfg.repetitions))
        .map(|rep| run_once(cfg, cfg.phold.seed.wrapping_add(rep)))
        .collect()
}

#[derive(Debug, thiserror::Error)]
#[error("started {achieved} of {requested} interference processes: {source}")]
pub struct InterferenceError {
    pub requested: usize,
    pub achieved: usize,
    #[source]
    pub source: io::Error,
}

/// CPU-bound busy-loop processes, killed and reaped on drop.
#[derive(Debug)]
pub struct Interference {
    children: Vec<Child>,
}

impl Interference {
    pub fn spawn(n: usize) -> Result<Self, InterferenceError> {
        let mut load = Interference {
            children: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let child = Command::new("sh")
                .args(["-c", "while :; do :; done"])
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|source| InterferenceError {
                    requested: n,
                    achieved: load.children.len(),
                    source,
                })?;
            load.children.push(child);
        }
        Ok(load)
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn pids(&self) -> Vec<u32> {
        self.children.iter().map(Child::id).collect()
    }

    /// Children that have not exited.
    pub fn live(&mut self) -> usize {
        self.children
            .iter_mut()
            .map(|c| matches!(c.try_wait(), Ok(None)))
            .filter(|&alive| alive)
            .count()
    }
}

impl Drop for Interference {
    fn drop(&mut self) {
        for c in &mut self.children {
            let _ = c.kill();
        }
        for c in &mut self.children {
            let _ = c.wait();
        }
    }
}
