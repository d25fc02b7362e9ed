//! The worker main loop.

use std::sync::atomic::Ordering::Relaxed;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::lp::{LpState, ReclaimReport};
use super::shared::{HookEvent, Shared};
use crate::error::KernelError;
use crate::event::{EventKey, LpId, Message, MessageId, VirtualTime, WorkerId};
use crate::gvt::{Coordinator, KernelOps, ProtocolLocal, StepOutcome};
use crate::model::Model;

/// When a worker attempts to start a GVT round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    /// Wall-clock timeout per worker.
    Interval(Duration),
    /// Every `n`-th iteration of the worker; deterministic under the
    /// cooperative scheduler.
    Iterations(u64),
    /// Only explicit calls to [`Worker::try_trigger`].
    Manual,
}

/// Upper bound on the round interval once a worker has nothing left to
/// execute below `t_end`, so runs end promptly.
const DRAINED_PROBE: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub iterations: u64,
    pub executed: u64,
    pub committed: u64,
    pub rollbacks: u64,
    pub rolled_back_events: u64,
    pub coasted: u64,
    pub messages_sent: u64,
    pub anti_messages_sent: u64,
    pub annihilated: u64,
    pub rounds_started: u64,
    pub reclaimed: ReclaimReport,
}

/// What one main-loop iteration did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationReport {
    pub executed: u32,
    pub rollbacks: u32,
    pub sent: u32,
    pub outcome: StepOutcome,
    /// Set when this iteration learned a newer GVT.
    pub new_gvt: Option<VirtualTime>,
}

impl IterationReport {
    pub fn is_idle(&self) -> bool {
        self.executed == 0
            && self.rollbacks == 0
            && self.sent == 0
            && matches!(self.outcome, StepOutcome::Idle | StepOutcome::Waiting)
            && self.new_gvt.is_none()
    }
}

pub struct Worker<M: Model> {
    id: WorkerId,
    model: Arc<M>,
    lps: Vec<LpState<M::State>>,
    proto: ProtocolLocal,
    trigger: Trigger,
    last_trigger: Instant,
    since_trigger: u64,
    known_gvt: VirtualTime,
    stats: WorkerStats,
    committed: Option<Vec<(MessageId, VirtualTime)>>,
    /// `(round, gvt)` for every GVT value this worker computed.
    computed_gvts: Vec<(u64, VirtualTime)>,
    done: bool,
}

/// Per-iteration counters shared between the kernel operations.
#[derive(Default)]
struct Tally {
    executed: u32,
    rollbacks: u32,
    sent: u32,
}

/// Kernel operations over the disjoint parts of a worker the GVT protocol
/// does not own.
struct Ops<'a, M: Model> {
    me: WorkerId,
    model: &'a M,
    lps: &'a mut [LpState<M::State>],
    shared: &'a Shared,
    stats: &'a mut WorkerStats,
    tally: &'a mut Tally,
}

impl<M: Model> Ops<'_, M> {
    fn send(&mut self, msgs: Vec<Message>) -> VirtualTime {
        let mut min = VirtualTime::INFINITY;
        for m in msgs {
            min = min.min(m.recv_time);
            if m.is_anti() {
                self.stats.anti_messages_sent += 1;
            } else {
                self.stats.messages_sent += 1;
            }
            self.tally.sent += 1;
            self.shared.send(m);
        }
        min
    }

    fn lp_index(&self, lp: LpId) -> usize {
        self.shared.local_index(lp)
    }

    fn rollback(&mut self, idx: usize, bound: EventKey) -> Result<VirtualTime, KernelError> {
        let gvt = self.shared.published_gvt();
        if bound.time < gvt {
            self.shared.record_safety_violation();
            if self.shared.audit() {
                return Err(KernelError::RollbackBelowGvt {
                    lp: self.lps[idx].id(),
                    target: bound.time,
                    gvt,
                });
            }
        }
        let r = self.lps[idx].rollback(self.model, bound)?;
        self.stats.rollbacks += 1;
        self.stats.rolled_back_events += r.undone as u64;
        self.stats.coasted += r.coasted as u64;
        self.tally.rollbacks += 1;
        Ok(self.send(r.anti_messages))
    }

    fn next_lp(&self) -> Option<usize> {
        let horizon = self.shared.t_end();
        self.lps
            .iter()
            .enumerate()
            .filter_map(|(i, lp)| lp.queue().peek_next().map(|m| (m.key(), i)))
            .filter(|(k, _)| k.time < horizon)
            .min()
            .map(|(_, i)| i)
    }
}

impl<M: Model> KernelOps for Ops<'_, M> {
    fn incorporate(&mut self) -> Result<VirtualTime, KernelError> {
        let msgs = self.shared.inbox(self.me).drain();
        for m in msgs {
            let idx = self.lp_index(m.dst);
            let r = self.lps[idx].incorporate([m])?;
            self.stats.annihilated += r.annihilated as u64;
        }
        let mut min = VirtualTime::INFINITY;
        for idx in 0..self.lps.len() {
            if let Some(bound) = self.lps[idx].pending_rollback() {
                min = min.min(self.rollback(idx, bound)?);
            }
        }
        Ok(min)
    }

    fn local_min(&self) -> VirtualTime {
        self.lps
            .iter()
            .map(|lp| lp.queue().min_pending_time())
            .fold(VirtualTime::INFINITY, VirtualTime::min)
    }

    fn execute_and_send(&mut self) -> Result<(bool, VirtualTime), KernelError> {
        let Some(idx) = self.next_lp() else {
            return Ok((false, VirtualTime::INFINITY));
        };
        let (_, out) = self.lps[idx]
            .execute_next(self.model, self.shared.t_end())
            .expect("next_lp checked the horizon");
        self.stats.executed += 1;
        self.tally.executed += 1;
        self.shared.progress(self.me).executed.fetch_add(1, Relaxed);
        Ok((true, self.send(out)))
    }
}

impl<M: Model> Worker<M> {
    pub(crate) fn new(
        id: WorkerId,
        model: Arc<M>,
        lps: Vec<LpState<M::State>>,
        coordinator: &Coordinator,
        trigger: Trigger,
        record_commits: bool,
    ) -> Self {
        Worker {
            id,
            model,
            lps,
            proto: ProtocolLocal::for_coordinator(coordinator),
            trigger,
            last_trigger: Instant::now(),
            since_trigger: 0,
            known_gvt: VirtualTime::ZERO,
            stats: WorkerStats::default(),
            committed: record_commits.then(Vec::new),
            computed_gvts: Vec::new(),
            done: false,
        }
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn lps(&self) -> &[LpState<M::State>] {
        &self.lps
    }

    pub fn protocol(&self) -> &ProtocolLocal {
        &self.proto
    }

    pub fn stats(&self) -> &WorkerStats {
        &self.stats
    }

    pub fn known_gvt(&self) -> VirtualTime {
        self.known_gvt
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn computed_gvts(&self) -> &[(u64, VirtualTime)] {
        &self.computed_gvts
    }

    pub fn committed(&self) -> Option<&[(MessageId, VirtualTime)]> {
        self.committed.as_deref()
    }

    pub fn checksums(&self) -> Vec<(LpId, u64)> {
        self.lps
            .iter()
            .map(|lp| (lp.id(), self.model.checksum(lp.state())))
            .collect()
    }

    fn ops<'a>(&'a mut self, shared: &'a Shared, tally: &'a mut Tally) -> (Ops<'a, M>, &'a mut ProtocolLocal) {
        (
            Ops {
                me: self.id,
                model: &*self.model,
                lps: &mut self.lps,
                shared,
                stats: &mut self.stats,
                tally,
            },
            &mut self.proto,
        )
    }

    /// Minimum pending timestamp over this worker's LPs.
    pub fn local_min(&self) -> VirtualTime {
        self.lps
            .iter()
            .map(|lp| lp.queue().min_pending_time())
            .fold(VirtualTime::INFINITY, VirtualTime::min)
    }

    /// Attempts to start a GVT round.
    pub fn try_trigger(&mut self, shared: &Shared) -> Result<bool, KernelError> {
        let started = match (&mut self.proto, shared.coordinator()) {
            (ProtocolLocal::WaitFree(l), Coordinator::WaitFree(g)) => l.try_trigger(g)?,
            (ProtocolLocal::Fh(l), Coordinator::Fh(g)) => l.try_trigger(g)?,
            _ => unreachable!("protocol state does not match coordinator"),
        };
        self.stats.rounds_started += u64::from(started);
        Ok(started)
    }

    fn trigger_due(&mut self, shared: &Shared) -> bool {
        match self.trigger {
            Trigger::Manual => false,
            Trigger::Iterations(n) => {
                self.since_trigger += 1;
                if self.since_trigger >= n {
                    self.since_trigger = 0;
                    true
                } else {
                    false
                }
            }
            Trigger::Interval(interval) => {
                let drained = self.local_min() >= shared.t_end();
                let wait = if drained { interval.min(DRAINED_PROBE) } else { interval };
                if self.last_trigger.elapsed() >= wait {
                    self.last_trigger = Instant::now();
                    true
                } else {
                    false
                }
            }
        }
    }

    /// One main-loop iteration: incorporate the inbox (running any rollbacks
    /// it forces), execute at most one event, send its output, then take one
    /// GVT protocol step.
    pub fn iterate(&mut self, shared: &Shared) -> Result<IterationReport, KernelError> {
        if self.done {
            return Err(KernelError::ContractViolation(format!(
                "{} iterated after termination",
                self.id
            )));
        }
        self.stats.iterations += 1;
        shared.progress(self.id).iterations.fetch_add(1, Relaxed);
        let me = self.id;
        let mut tally = Tally::default();

        {
            let (mut ops, proto) = self.ops(shared, &mut tally);
            if let ProtocolLocal::WaitFree(l) = proto {
                l.begin_iteration();
            }
            let sent = ops.incorporate()?;
            let (_, s) = ops.execute_and_send()?;
            // after the enqueues, as the critical-section protocol requires
            match (proto, shared.coordinator()) {
                (ProtocolLocal::WaitFree(l), _) => l.on_sent(sent.min(s)),
                (ProtocolLocal::Fh(l), Coordinator::Fh(g)) => l.on_sent(g, me, sent.min(s)),
                _ => unreachable!("protocol state does not match coordinator"),
            }
        }

        if self.trigger_due(shared) {
            self.try_trigger(shared)?;
        }

        let outcome = {
            let (mut ops, proto) = self.ops(shared, &mut tally);
            match (proto, shared.coordinator()) {
                (ProtocolLocal::WaitFree(l), Coordinator::WaitFree(g)) => l.step(g, me, &mut ops)?,
                (ProtocolLocal::Fh(l), Coordinator::Fh(g)) => {
                    let hooked = shared.has_hook();
                    l.step(g, me, &mut ops, |remaining| {
                        if hooked {
                            shared.fire(me, HookEvent::InCriticalSection { remaining });
                        }
                    })?
                }
                _ => unreachable!("protocol state does not match coordinator"),
            }
        };
        if let Some(gvt) = outcome.gvt() {
            let round = match outcome {
                StepOutcome::Aware { round, .. } | StepOutcome::Contributed { round, .. } => round,
                _ => unreachable!("only closing steps carry a GVT"),
            };
            self.computed_gvts.push((round, gvt));
        }
        shared.fire(me, HookEvent::AfterStep { outcome });

        let mut new_gvt = None;
        let published = shared.published_gvt();
        if published > self.known_gvt {
            self.known_gvt = published;
            self.fossil_collect(published)?;
            shared.progress(me).committed.store(self.stats.committed, Relaxed);
            new_gvt = Some(published);
            shared.fire(me, HookEvent::Commit { gvt: published });
            if published >= shared.t_end() {
                self.finish(shared)?;
            }
        }

        Ok(IterationReport {
            executed: tally.executed,
            rollbacks: tally.rollbacks,
            sent: tally.sent,
            outcome,
            new_gvt,
        })
    }

    /// Reclaims history below `gvt` on every owned LP.
    pub fn fossil_collect(&mut self, gvt: VirtualTime) -> Result<ReclaimReport, KernelError> {
        let mut total = ReclaimReport::default();
        let mut newly = 0u64;
        for lp in &mut self.lps {
            let committed = &mut self.committed;
            let r = lp.fossil_collect(gvt, |m| {
                newly += 1;
                if let Some(c) = committed.as_mut() {
                    c.push((m.id, m.recv_time));
                }
            })?;
            total += r;
        }
        self.stats.committed += newly;
        self.stats.reclaimed += total;
        Ok(total)
    }

    /// Commits everything once GVT has passed `t_end`.
    fn finish(&mut self, shared: &Shared) -> Result<(), KernelError> {
        let mut newly = 0u64;
        for lp in &mut self.lps {
            lp.queue().check_unmatched(shared.t_end())?;
            let committed = &mut self.committed;
            lp.commit_all(|m| {
                newly += 1;
                if let Some(c) = committed.as_mut() {
                    c.push((m.id, m.recv_time));
                }
            });
        }
        self.stats.committed += newly;
        shared.progress(self.id).committed.store(self.stats.committed, Relaxed);
        self.done = true;
        Ok(())
    }
}
