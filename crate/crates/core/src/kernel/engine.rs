//! Building a run and driving it, either free-threaded (one OS thread per
//! worker) or under a cooperative single-threaded scheduler that can audit
//! the whole system between steps.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lp::LpState;
use super::shared::{GvtProtocol, Hook, Shared};
use super::worker::{IterationReport, Trigger, Worker, WorkerStats};
use crate::error::KernelError;
use crate::event::{LpId, MessageId, VirtualTime, WorkerId};
use crate::gvt::StepOutcome;
use crate::model::Model;

#[derive(Clone)]
pub struct EngineConfig {
    pub workers: usize,
    pub protocol: GvtProtocol,
    pub trigger: Trigger,
    pub t_end: VirtualTime,
    pub checkpoint_interval: u32,
    pub record_commits: bool,
    pub audit: bool,
    pub hook: Option<Hook>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 1,
            protocol: GvtProtocol::WaitFree,
            trigger: Trigger::Interval(Duration::from_millis(1000)),
            t_end: VirtualTime::INFINITY,
            checkpoint_interval: 1,
            record_commits: false,
            audit: false,
            hook: None,
        }
    }
}

/// Results of a finished run.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub wall_clock: Duration,
    pub stats: Vec<WorkerStats>,
    /// Committed `(event id, timestamp)` pairs sorted by id, when recorded.
    pub committed: Option<Vec<(MessageId, VirtualTime)>>,
    /// Final model checksum per LP.
    pub checksums: Vec<u64>,
    /// GVT of every completed round, in round order.
    pub gvt_values: Vec<VirtualTime>,
    /// Rounds in which two workers computed different GVT values.
    pub gvt_disagreements: u64,
    pub spin_tries: u64,
    pub safety_violations: u64,
    pub gvt_regressions: u64,
    pub sweeps: u64,
    pub sweep_violations: u64,
}

impl RunOutcome {
    pub fn executed(&self) -> u64 {
        self.stats.iter().map(|s| s.executed).sum()
    }

    pub fn committed_events(&self) -> u64 {
        self.stats.iter().map(|s| s.committed).sum()
    }

    pub fn rollbacks(&self) -> u64 {
        self.stats.iter().map(|s| s.rollbacks).sum()
    }

    pub fn efficiency(&self) -> f64 {
        let executed = self.executed();
        if executed == 0 {
            1.0
        } else {
            self.committed_events() as f64 / executed as f64
        }
    }

    pub fn gvt_monotone(&self) -> bool {
        self.gvt_values.windows(2).all(|w| w[0] <= w[1])
    }
}

pub struct Engine<M: Model> {
    shared: Arc<Shared>,
    workers: Vec<Worker<M>>,
}

impl<M: Model> Engine<M> {
    /// Creates the LPs, distributes them over workers and enqueues every
    /// initial event in its destination inbox.
    pub fn new(model: Arc<M>, cfg: EngineConfig) -> Self {
        assert!(cfg.workers >= 1, "at least one worker");
        let shared = Arc::new(Shared::new(
            cfg.workers,
            cfg.protocol,
            cfg.t_end,
            cfg.audit,
            cfg.hook.clone(),
        ));
        let mut per_worker: Vec<Vec<LpState<M::State>>> = (0..cfg.workers).map(|_| Vec::new()).collect();
        let mut initial = Vec::new();
        for l in 0..model.num_lps() {
            let (lp, msgs) = LpState::new(&*model, LpId(l), cfg.checkpoint_interval);
            per_worker[shared.owner(LpId(l)).index()].push(lp);
            initial.extend(msgs);
        }
        for m in initial {
            shared.send(m);
        }
        let workers = per_worker
            .into_iter()
            .enumerate()
            .map(|(w, lps)| {
                Worker::new(
                    WorkerId(w as u32),
                    Arc::clone(&model),
                    lps,
                    shared.coordinator(),
                    cfg.trigger,
                    cfg.record_commits,
                )
            })
            .collect();
        Engine { shared, workers }
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    /// Runs every worker on its own thread until GVT reaches `t_end`.
    pub fn run_threaded(self) -> Result<RunOutcome, KernelError> {
        let Engine { shared, workers } = self;
        let start = Instant::now();
        let joined: Vec<Result<Option<Worker<M>>, KernelError>> = thread::scope(|s| {
            let handles: Vec<_> = workers
                .into_iter()
                .map(|w| {
                    let shared = &*shared;
                    s.spawn(move || worker_thread(w, shared))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|p| {
                        let msg = p
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "unknown panic".into());
                        Err(KernelError::WorkerPanic(msg))
                    })
                })
                .collect()
        });
        let wall_clock = start.elapsed();
        let mut finished = Vec::new();
        let mut first_err = None;
        for r in joined {
            match r {
                Ok(Some(w)) => finished.push(w),
                Ok(None) => {}
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        Ok(collect_outcome(&shared, &finished, wall_clock, 0, 0))
    }

    pub fn into_scheduler(self, seed: u64) -> CoopScheduler<M> {
        CoopScheduler {
            shared: self.shared,
            workers: self.workers,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            sweeps: 0,
            sweep_violations: 0,
            started: Instant::now(),
        }
    }
}

struct AbortOnPanic<'a>(&'a Shared);

impl Drop for AbortOnPanic<'_> {
    fn drop(&mut self) {
        if thread::panicking() {
            self.0.abort();
        }
    }
}

fn worker_thread<M: Model>(mut w: Worker<M>, shared: &Shared) -> Result<Option<Worker<M>>, KernelError> {
    let _guard = AbortOnPanic(shared);
    loop {
        if shared.aborted() {
            return Ok(None);
        }
        match w.iterate(shared) {
            Ok(report) => {
                if w.is_done() {
                    return Ok(Some(w));
                }
                if report.is_idle() {
                    thread::yield_now();
                }
            }
            Err(e) => {
                shared.abort();
                return Err(e);
            }
        }
    }
}

fn collect_outcome<M: Model>(
    shared: &Shared,
    workers: &[Worker<M>],
    wall_clock: Duration,
    sweeps: u64,
    sweep_violations: u64,
) -> RunOutcome {
    let committed = workers
        .iter()
        .map(|w| w.committed())
        .collect::<Option<Vec<_>>>()
        .map(|parts| {
            let mut all: Vec<_> = parts.concat();
            all.sort();
            all
        });
    let mut checksums: Vec<(LpId, u64)> = workers.iter().flat_map(|w| w.checksums()).collect();
    checksums.sort();

    let mut by_round: BTreeMap<u64, VirtualTime> = BTreeMap::new();
    let mut gvt_disagreements = 0;
    for (round, gvt) in workers.iter().flat_map(|w| w.computed_gvts().iter().copied()) {
        match by_round.get(&round) {
            Some(prev) if *prev != gvt => gvt_disagreements += 1,
            Some(_) => {}
            None => {
                by_round.insert(round, gvt);
            }
        }
    }

    RunOutcome {
        wall_clock,
        stats: workers.iter().map(|w| w.stats().clone()).collect(),
        committed,
        checksums: checksums.into_iter().map(|(_, c)| c).collect(),
        gvt_values: by_round.into_values().collect(),
        gvt_disagreements,
        spin_tries: shared.coordinator().spin_tries(),
        safety_violations: shared.safety_violations(),
        gvt_regressions: shared.gvt_regressions(),
        sweeps,
        sweep_violations,
    }
}

/// Result of a stop-the-world GVT safety check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub gvt: VirtualTime,
    /// Smallest timestamp of any pending event, unmatched anti-message or
    /// inbox-resident message in the system.
    pub min_pending: VirtualTime,
}

impl Sweep {
    pub fn holds(&self) -> bool {
        self.gvt <= self.min_pending
    }
}

/// Steps workers one iteration at a time from a single thread, in an order
/// chosen by the caller or by a seeded generator. With auditing on, every
/// step that computes a GVT is followed by a [`Sweep`].
pub struct CoopScheduler<M: Model> {
    shared: Arc<Shared>,
    workers: Vec<Worker<M>>,
    rng: ChaCha8Rng,
    steps: u64,
    sweeps: u64,
    sweep_violations: u64,
    started: Instant,
}

impl<M: Model> CoopScheduler<M> {
    pub fn shared(&self) -> &Shared {
        &self.shared
    }

    pub fn workers(&self) -> &[Worker<M>] {
        &self.workers
    }

    pub fn worker_mut(&mut self, w: usize) -> &mut Worker<M> {
        &mut self.workers[w]
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn sweep_violations(&self) -> u64 {
        self.sweep_violations
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn all_done(&self) -> bool {
        self.workers.iter().all(Worker::is_done)
    }

    pub fn try_trigger(&mut self, w: usize) -> Result<bool, KernelError> {
        self.workers[w].try_trigger(&self.shared)
    }

    /// Runs one iteration of worker `w`.
    pub fn step(&mut self, w: usize) -> Result<IterationReport, KernelError> {
        let report = self.workers[w].iterate(&self.shared)?;
        self.steps += 1;
        let closes = matches!(report.outcome, StepOutcome::Aware { .. })
            || report.outcome.gvt().is_some();
        if self.shared.audit() && closes {
            self.sweep();
        }
        Ok(report)
    }

    /// Steps a random unfinished worker. Returns `None` once all are done.
    pub fn step_random(&mut self) -> Result<Option<(usize, IterationReport)>, KernelError> {
        let live: Vec<usize> = (0..self.workers.len())
            .filter(|&i| !self.workers[i].is_done())
            .collect();
        if live.is_empty() {
            return Ok(None);
        }
        let w = live[self.rng.random_range(0..live.len())];
        Ok(Some((w, self.step(w)?)))
    }

    /// Steps random workers until all finish.
    pub fn run(&mut self, max_steps: u64) -> Result<RunOutcome, KernelError> {
        while self.step_random()?.is_some() {
            if self.steps > max_steps {
                return Err(KernelError::ContractViolation(format!(
                    "run did not finish within {max_steps} steps"
                )));
            }
        }
        Ok(self.outcome())
    }

    /// Checks that no pending message anywhere lies below the published GVT.
    pub fn sweep(&mut self) -> Sweep {
        let gvt = self.shared.published_gvt();
        let mut min_pending = VirtualTime::INFINITY;
        for (i, w) in self.workers.iter().enumerate() {
            min_pending = min_pending.min(w.local_min());
            // SAFETY: inboxes are only drained inside `Worker::iterate`, and
            // every worker is owned by this single-threaded scheduler.
            let inbox = unsafe { self.shared.inbox(WorkerId(i as u32)).peek_cloned() };
            for m in inbox {
                min_pending = min_pending.min(m.recv_time);
            }
        }
        let s = Sweep { gvt, min_pending };
        self.sweeps += 1;
        if !s.holds() {
            self.sweep_violations += 1;
        }
        s
    }

    pub fn outcome(&self) -> RunOutcome {
        collect_outcome(
            &self.shared,
            &self.workers,
            self.started.elapsed(),
            self.sweeps,
            self.sweep_violations,
        )
    }
}
