//! Wait-free multi-phase GVT.
//!
//! A round walks every worker through phases A, SEND, B, AWARE and END. Phase
//! completion is tracked with five shared counters that start at N and are
//! decremented once per worker; a worker enters the next phase only when it
//! observes the previous counter at zero, and until then it simply returns to
//! event processing. No arm waits, retries or takes a lock.
//!
//! Each worker computes its local minimum twice (A and B) and posts
//! `min(min_a, min_b)`. The SEND phase in between forces every worker to
//! execute and send once, so by the time anyone computes `min_b` every message
//! sent before the end of phase A is already in its receiver's queues.
//!
//! Ordering: all counter, flag and slot accesses are `SeqCst`, and inbox
//! pushes are `SeqCst` CASes, so a worker that sees a counter at zero also
//! sees every slot write and enqueue its peers made before decrementing.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering::SeqCst};

use super::{KernelOps, Padded, StepOutcome, TimeCell};
use crate::error::KernelError;
use crate::event::{VirtualTime, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    A,
    Send,
    B,
    Aware,
    End,
}

#[derive(Debug)]
pub struct WfShared {
    n: usize,
    c_a: AtomicUsize,
    c_send: AtomicUsize,
    c_b: AtomicUsize,
    c_aware: AtomicUsize,
    c_end: AtomicUsize,
    flag: AtomicBool,
    round: AtomicU64,
    local_minima: Box<[Padded<AtomicU64>]>,
    published: TimeCell,
    flag_resets: AtomicU64,
    regressions: AtomicU64,
}

impl WfShared {
    pub fn new(workers: usize) -> Self {
        assert!(workers >= 1);
        WfShared {
            n: workers,
            c_a: AtomicUsize::new(0),
            c_send: AtomicUsize::new(0),
            c_b: AtomicUsize::new(0),
            c_aware: AtomicUsize::new(0),
            c_end: AtomicUsize::new(0),
            flag: AtomicBool::new(false),
            round: AtomicU64::new(0),
            local_minima: (0..workers)
                .map(|_| Padded(AtomicU64::new(VirtualTime::INFINITY.to_bits())))
                .collect(),
            published: TimeCell::new(VirtualTime::ZERO),
            flag_resets: AtomicU64::new(0),
            regressions: AtomicU64::new(0),
        }
    }

    pub fn workers(&self) -> usize {
        self.n
    }

    pub fn flag(&self) -> bool {
        self.flag.load(SeqCst)
    }

    pub fn current_round(&self) -> u64 {
        self.round.load(SeqCst)
    }

    /// `[c_a, c_send, c_b, c_aware, c_end]`
    pub fn counters(&self) -> [usize; 5] {
        [&self.c_a, &self.c_send, &self.c_b, &self.c_aware, &self.c_end].map(|c| c.load(SeqCst))
    }

    pub fn published(&self) -> VirtualTime {
        self.published.load()
    }

    /// Successful TRUE to FALSE flag transitions so far.
    pub fn flag_resets(&self) -> u64 {
        self.flag_resets.load(SeqCst)
    }

    /// Rounds whose GVT came out below an earlier one.
    pub fn regressions(&self) -> u64 {
        self.regressions.load(SeqCst)
    }

    /// Starts a round: counters to N, then the flag. Fails if the previous
    /// round has not fully finished.
    pub fn init(&self) -> Result<(), KernelError> {
        if self.flag.load(SeqCst) || self.c_end.load(SeqCst) != 0 {
            return Err(KernelError::ContractViolation(
                "wait-free GVT init while a round is active".into(),
            ));
        }
        for c in [&self.c_a, &self.c_send, &self.c_b, &self.c_aware, &self.c_end] {
            c.store(self.n, SeqCst);
        }
        self.flag.store(true, SeqCst);
        Ok(())
    }

    fn post_local_min(&self, w: WorkerId, t: VirtualTime) {
        self.local_minima[w.index()].0.store(t.to_bits(), SeqCst);
    }

    fn slots(&self) -> Vec<VirtualTime> {
        self.local_minima
            .iter()
            .map(|s| VirtualTime::from_bits(s.0.load(SeqCst)))
            .collect()
    }
}

fn dec(c: &AtomicUsize) -> usize {
    let prev = c.fetch_sub(1, SeqCst);
    debug_assert!(prev > 0, "phase counter underflow");
    prev - 1
}

pub fn compute_global_min(slots: &[VirtualTime]) -> VirtualTime {
    slots.iter().copied().fold(VirtualTime::INFINITY, VirtualTime::min)
}

/// Worker-private protocol variables.
#[derive(Debug, Clone)]
pub struct WfLocal {
    pub phase: Phase,
    pub round: u64,
    pub min_a: VirtualTime,
    pub min_b: VirtualTime,
    /// Smallest timestamp sent from the iteration in which this worker saw
    /// the round start until it left phase SEND. Audit only.
    pub mints: VirtualTime,
    iteration_sent: VirtualTime,
}

impl Default for WfLocal {
    fn default() -> Self {
        Self::new()
    }
}

impl WfLocal {
    pub fn new() -> Self {
        WfLocal {
            phase: Phase::A,
            round: 0,
            min_a: VirtualTime::INFINITY,
            min_b: VirtualTime::INFINITY,
            mints: VirtualTime::INFINITY,
            iteration_sent: VirtualTime::INFINITY,
        }
    }

    pub fn begin_iteration(&mut self) {
        self.iteration_sent = VirtualTime::INFINITY;
    }

    pub fn on_sent(&mut self, t: VirtualTime) {
        self.iteration_sent = self.iteration_sent.min(t);
        if self.phase == Phase::Send {
            self.mints = self.mints.min(t);
        }
    }

    /// Timeout-driven round start: succeeds for exactly one worker per round.
    pub fn try_trigger(&mut self, g: &WfShared) -> Result<bool, KernelError> {
        if !g.flag.load(SeqCst)
            && g.c_end.load(SeqCst) == 0
            && g
                .round
                .compare_exchange(self.round, self.round + 1, SeqCst, SeqCst)
                .is_ok()
        {
            g.init()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// One pass through the protocol switch.
    pub fn step(
        &mut self,
        g: &WfShared,
        me: WorkerId,
        kernel: &mut impl KernelOps,
    ) -> Result<StepOutcome, KernelError> {
        if !g.flag.load(SeqCst) {
            if self.phase == Phase::End {
                self.phase = Phase::A;
                dec(&g.c_end);
                return Ok(StepOutcome::EndReset { round: self.round });
            }
            return Ok(StepOutcome::Idle);
        }

        self.round = g.round.load(SeqCst);
        let round = self.round;

        match self.phase {
            Phase::A => {
                let sent = kernel.incorporate()?;
                self.mints = self.iteration_sent.min(sent);
                self.min_a = kernel.local_min();
                self.phase = Phase::Send;
                dec(&g.c_a);
                Ok(StepOutcome::PhaseA {
                    round,
                    min_a: self.min_a,
                })
            }
            Phase::Send if g.c_a.load(SeqCst) == 0 => {
                let sent = kernel.incorporate()?;
                self.on_sent(sent);
                let (executed, sent) = kernel.execute_and_send()?;
                self.on_sent(sent);
                self.phase = Phase::B;
                dec(&g.c_send);
                Ok(StepOutcome::PhaseSend { round, executed })
            }
            Phase::B if g.c_send.load(SeqCst) == 0 => {
                kernel.incorporate()?;
                self.min_b = kernel.local_min();
                g.post_local_min(me, self.min_a.min(self.min_b));
                self.phase = Phase::Aware;
                dec(&g.c_b);
                Ok(StepOutcome::PhaseB {
                    round,
                    min_a: self.min_a,
                    min_b: self.min_b,
                    mints: self.mints,
                })
            }
            Phase::Aware if g.c_b.load(SeqCst) == 0 => {
                let gvt = compute_global_min(&g.slots());
                let prev = g.published.raise(gvt);
                if gvt < prev {
                    g.regressions.fetch_add(1, SeqCst);
                }
                self.phase = Phase::End;
                let mut flag_reset = false;
                if dec(&g.c_aware) == 0
                    && g.flag.compare_exchange(true, false, SeqCst, SeqCst).is_ok()
                {
                    g.flag_resets.fetch_add(1, SeqCst);
                    flag_reset = true;
                }
                Ok(StepOutcome::Aware {
                    round,
                    gvt,
                    flag_reset,
                })
            }
            _ => Ok(StepOutcome::Waiting),
        }
    }
}
