//! Critical-section GVT baseline.
//!
//! A round starts by setting a shared flag to N. Each worker, once it sees the
//! flag, tracks the smallest timestamp it sends; on its next protocol step it
//! takes a test-and-set spinlock, incorporates its inbox, posts
//! `min(local minimum, smallest sent)` and decrements the flag. Whoever brings
//! the flag to zero computes and publishes the global minimum before
//! releasing the lock. Failed lock attempts are counted.

use std::hint;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering::SeqCst};

use super::{compute_global_min, KernelOps, Padded, StepOutcome, TimeCell};
use crate::error::KernelError;
use crate::event::{VirtualTime, WorkerId};

#[derive(Debug)]
pub struct FhShared {
    n: usize,
    /// Workers yet to contribute; zero when idle.
    flag: AtomicUsize,
    round: AtomicU64,
    guard: AtomicBool,
    spin_tries: AtomicU64,
    send_min: Box<[Padded<AtomicU64>]>,
    local_minima: Box<[Padded<AtomicU64>]>,
    published: TimeCell,
    contributions: AtomicU64,
    rounds_completed: AtomicU64,
    regressions: AtomicU64,
    occupancy: AtomicUsize,
    exclusion_violations: AtomicU64,
}

fn slots(n: usize) -> Box<[Padded<AtomicU64>]> {
    (0..n)
        .map(|_| Padded(AtomicU64::new(VirtualTime::INFINITY.to_bits())))
        .collect()
}

fn load(slot: &Padded<AtomicU64>) -> VirtualTime {
    VirtualTime::from_bits(slot.0.load(SeqCst))
}

impl FhShared {
    pub fn new(workers: usize) -> Self {
        assert!(workers >= 1);
        FhShared {
            n: workers,
            flag: AtomicUsize::new(0),
            round: AtomicU64::new(0),
            guard: AtomicBool::new(false),
            spin_tries: AtomicU64::new(0),
            send_min: slots(workers),
            local_minima: slots(workers),
            published: TimeCell::new(VirtualTime::ZERO),
            contributions: AtomicU64::new(0),
            rounds_completed: AtomicU64::new(0),
            regressions: AtomicU64::new(0),
            occupancy: AtomicUsize::new(0),
            exclusion_violations: AtomicU64::new(0),
        }
    }

    pub fn workers(&self) -> usize {
        self.n
    }

    pub fn remaining(&self) -> usize {
        self.flag.load(SeqCst)
    }

    pub fn current_round(&self) -> u64 {
        self.round.load(SeqCst)
    }

    pub fn spin_tries(&self) -> u64 {
        self.spin_tries.load(SeqCst)
    }

    pub fn contributions(&self) -> u64 {
        self.contributions.load(SeqCst)
    }

    pub fn rounds_completed(&self) -> u64 {
        self.rounds_completed.load(SeqCst)
    }

    pub fn published(&self) -> VirtualTime {
        self.published.load()
    }

    pub fn regressions(&self) -> u64 {
        self.regressions.load(SeqCst)
    }

    /// Times two workers were observed inside the critical section at once.
    pub fn exclusion_violations(&self) -> u64 {
        self.exclusion_violations.load(SeqCst)
    }

    pub fn send_min(&self, w: WorkerId) -> VirtualTime {
        load(&self.send_min[w.index()])
    }

    /// Resets the per-worker send minima and raises the flag to N.
    pub fn start(&self) -> Result<(), KernelError> {
        if self.flag.load(SeqCst) != 0 {
            return Err(KernelError::ContractViolation(
                "critical-section GVT start while a round is active".into(),
            ));
        }
        for s in self.send_min.iter() {
            s.0.store(VirtualTime::INFINITY.to_bits(), SeqCst);
        }
        self.flag.store(self.n, SeqCst);
        Ok(())
    }

    fn lock(&self) {
        while self.guard.swap(true, SeqCst) {
            self.spin_tries.fetch_add(1, SeqCst);
            hint::spin_loop();
        }
        if self.occupancy.fetch_add(1, SeqCst) != 0 {
            self.exclusion_violations.fetch_add(1, SeqCst);
        }
    }

    fn unlock(&self) {
        self.occupancy.fetch_sub(1, SeqCst);
        self.guard.store(false, SeqCst);
    }
}

/// Worker-private state: the last round this worker contributed to.
#[derive(Debug, Clone, Default)]
pub struct FhLocal {
    pub round: u64,
}

impl FhLocal {
    pub fn new() -> Self {
        FhLocal { round: 0 }
    }

    fn contributed(&self, g: &FhShared) -> bool {
        self.round == g.round.load(SeqCst)
    }

    /// Must be called after the messages are enqueued, so that a send the
    /// flag check misses is already visible to every later contributor.
    pub fn on_sent(&self, g: &FhShared, me: WorkerId, t: VirtualTime) {
        if t.is_infinite() {
            return;
        }
        if g.flag.load(SeqCst) > 0 && !self.contributed(g) {
            let slot = &g.send_min[me.index()].0;
            slot.fetch_min(t.to_bits(), SeqCst);
        }
    }

    pub fn try_trigger(&mut self, g: &FhShared) -> Result<bool, KernelError> {
        if g.flag.load(SeqCst) == 0
            && g
                .round
                .compare_exchange(self.round, self.round + 1, SeqCst, SeqCst)
                .is_ok()
        {
            g.start()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Contributes this worker's local minimum if a round is active and it
    /// has not done so yet. Blocks on the spinlock. `in_critical_section` runs
    /// right after the lock is taken, with the number of workers still to
    /// contribute.
    pub fn step(
        &mut self,
        g: &FhShared,
        me: WorkerId,
        kernel: &mut impl KernelOps,
        in_critical_section: impl FnOnce(usize),
    ) -> Result<StepOutcome, KernelError> {
        if g.flag.load(SeqCst) == 0 {
            return Ok(StepOutcome::Idle);
        }
        if self.contributed(g) {
            return Ok(StepOutcome::Waiting);
        }
        let round = g.round.load(SeqCst);

        g.lock();
        in_critical_section(g.flag.load(SeqCst));
        let result = self.contribute(g, me, kernel, round);
        g.unlock();
        result
    }

    fn contribute(
        &mut self,
        g: &FhShared,
        me: WorkerId,
        kernel: &mut impl KernelOps,
        round: u64,
    ) -> Result<StepOutcome, KernelError> {
        let sent = kernel.incorporate()?;
        self.on_sent(g, me, sent);
        let local_min = kernel.local_min().min(g.send_min(me));
        g.local_minima[me.index()].0.store(local_min.to_bits(), SeqCst);
        self.round = round;
        g.contributions.fetch_add(1, SeqCst);
        let published = if g.flag.fetch_sub(1, SeqCst) == 1 {
            let all: Vec<VirtualTime> = g.local_minima.iter().map(load).collect();
            let gvt = compute_global_min(&all);
            if gvt < g.published.raise(gvt) {
                g.regressions.fetch_add(1, SeqCst);
            }
            g.rounds_completed.fetch_add(1, SeqCst);
            Some(gvt)
        } else {
            None
        };
        Ok(StepOutcome::Contributed {
            round,
            local_min,
            published,
        })
    }
}
