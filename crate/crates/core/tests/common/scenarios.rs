use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timewarp::gvt::{Coordinator, FhLocal, FhShared, KernelOps, StepOutcome, WfLocal, WfShared};
use timewarp::kernel::{GvtProtocol, Hook, HookEvent, Shared, Sweep, Trigger};
use timewarp::{KernelError, PholdConfig, VirtualTime, WorkerId};

use super::{coop, engine_config, phold_engine, Script};

/// A send that the receiver's phase-A minimum missed, issued before the
/// sender finished phase SEND.
#[derive(Debug)]
pub struct LateSend {
    pub receiver_min_a: VirtualTime,
    pub sent_min: VirtualTime,
    /// What a single-pass minimum over the phase-A values would give.
    pub min_a_only: VirtualTime,
    pub gvt: VirtualTime,
    pub sweep: Sweep,
    pub trace: Vec<(usize, StepOutcome)>,
}

/// Two workers, LP 0 on the sender and LP 1 on the receiver. The receiver
/// computes its phase-A minimum, then the sender executes an event that sends
/// six messages to the receiver, then takes its own phase A. The schedule is
/// fixed from there to the first published GVT.
pub fn late_send() -> LateSend {
    let outs: Vec<(u32, f64)> = (1..=6).map(|i| (1, 0.1 * i as f64)).collect();
    let model = Script {
        lps: 2,
        initial: vec![(0, 1.0, outs), (1, 10.0, vec![])],
    };
    let ecfg = engine_config(GvtProtocol::WaitFree, 2, Trigger::Manual, f64::INFINITY);
    let mut s = coop(model, ecfg, 0);
    let mut trace = Vec::new();

    assert!(s.try_trigger(1).unwrap());
    let mut step = |s: &mut timewarp::CoopScheduler<Script>, w: usize| {
        let r = s.step(w).unwrap();
        trace.push((w, r.outcome));
        r
    };

    let r = step(&mut s, 1);
    let StepOutcome::PhaseA { min_a: receiver_min_a, .. } = r.outcome else {
        panic!("receiver should take phase A first, got {:?}", r.outcome);
    };
    let r = step(&mut s, 0);
    assert_eq!(r.sent, 6, "sender fires its burst");
    let StepOutcome::PhaseA { min_a: sender_min_a, .. } = r.outcome else {
        panic!("sender phase A expected, got {:?}", r.outcome);
    };
    assert!(matches!(step(&mut s, 0).outcome, StepOutcome::PhaseSend { .. }));
    let r = step(&mut s, 1);
    assert!(r.rollbacks > 0, "the burst is a straggler for the receiver");
    assert!(matches!(r.outcome, StepOutcome::PhaseSend { .. }));
    assert!(matches!(step(&mut s, 0).outcome, StepOutcome::PhaseB { .. }));
    assert!(matches!(step(&mut s, 1).outcome, StepOutcome::PhaseB { .. }));
    let r = step(&mut s, 0);
    let StepOutcome::Aware { gvt, .. } = r.outcome else {
        panic!("sender should compute the GVT, got {:?}", r.outcome);
    };
    let sweep = s.sweep();
    LateSend {
        receiver_min_a,
        sent_min: VirtualTime::new(1.1),
        min_a_only: receiver_min_a.min(sender_min_a),
        gvt,
        sweep,
        trace,
    }
}

/// Kernel stand-in with a fixed set of pending timestamps and in-transit
/// messages; nothing ever executes.
#[derive(Debug, Clone)]
pub struct Frozen {
    pub pending: Vec<VirtualTime>,
    pub inbox: Vec<VirtualTime>,
}

impl KernelOps for Frozen {
    fn incorporate(&mut self) -> Result<VirtualTime, KernelError> {
        self.pending.append(&mut self.inbox);
        Ok(VirtualTime::INFINITY)
    }
    fn local_min(&self) -> VirtualTime {
        self.pending.iter().copied().fold(VirtualTime::INFINITY, VirtualTime::min)
    }
    fn execute_and_send(&mut self) -> Result<(bool, VirtualTime), KernelError> {
        Ok((false, VirtualTime::INFINITY))
    }
}

pub fn random_frozen(rng: &mut impl Rng, workers: usize) -> Vec<Frozen> {
    let draw = |rng: &mut dyn rand::RngCore, n: usize| -> Vec<VirtualTime> {
        (0..n)
            .map(|_| VirtualTime::new((rng.random_range(0..10_000) as f64) / 100.0))
            .collect()
    };
    (0..workers)
        .map(|_| {
            let np = rng.random_range(0..5);
            let ni = rng.random_range(0..3);
            Frozen {
                pending: draw(rng, np),
                inbox: draw(rng, ni),
            }
        })
        .collect()
}

pub fn frozen_min(cfg: &[Frozen]) -> VirtualTime {
    cfg.iter()
        .flat_map(|f| f.pending.iter().chain(&f.inbox))
        .copied()
        .fold(VirtualTime::INFINITY, VirtualTime::min)
}

/// One wait-free round over a frozen configuration, steps interleaved at
/// random. Returns every GVT value computed.
pub fn wf_round(cfg: &[Frozen], rng: &mut impl Rng) -> Vec<VirtualTime> {
    let n = cfg.len();
    let g = WfShared::new(n);
    let mut kernels = cfg.to_vec();
    let mut locals: Vec<WfLocal> = (0..n).map(|_| WfLocal::new()).collect();
    let starter = rng.random_range(0..n);
    assert!(locals[starter].try_trigger(&g).unwrap());
    let mut seen = Vec::new();
    while g.flag() {
        let w = rng.random_range(0..n);
        if let Some(v) = locals[w].step(&g, WorkerId(w as u32), &mut kernels[w]).unwrap().gvt() {
            seen.push(v);
        }
    }
    seen
}

/// One critical-section round over a frozen configuration.
pub fn fh_round(cfg: &[Frozen], rng: &mut impl Rng) -> Vec<VirtualTime> {
    let n = cfg.len();
    let g = FhShared::new(n);
    let mut kernels = cfg.to_vec();
    let mut locals: Vec<FhLocal> = (0..n).map(|_| FhLocal::new()).collect();
    let starter = rng.random_range(0..n);
    assert!(locals[starter].try_trigger(&g).unwrap());
    let mut seen = Vec::new();
    while g.remaining() > 0 {
        let w = rng.random_range(0..n);
        if let Some(v) = locals[w]
            .step(&g, WorkerId(w as u32), &mut kernels[w], |_| {})
            .unwrap()
            .gvt()
        {
            seen.push(v);
        }
    }
    seen
}

/// Final GVT of a cooperative run, which publishes once all work below
/// `t_end` is done.
pub fn final_gvt(cfg: &PholdConfig, protocol: GvtProtocol, workers: usize, seed: u64) -> VirtualTime {
    let mut s = phold_engine(cfg, engine_config(protocol, workers, Trigger::Iterations(7), cfg.t_end))
        .into_scheduler(seed);
    let out = s.run(10_000_000).unwrap();
    *out.gvt_values.last().expect("at least one round")
}

#[derive(Debug, Default, Clone)]
pub struct StallReport {
    pub fired: bool,
    /// Per other worker: executed events before and after the stall.
    pub executed: Vec<(u64, u64)>,
    /// Per other worker: committed events before and after the stall.
    pub committed: Vec<(u64, u64)>,
    pub spin_tries: (u64, u64),
    pub contributions: (u64, u64),
    pub published: (VirtualTime, VirtualTime),
}

/// Runs PHOLD free-threaded and, once, suspends worker 0 for `stall`: under
/// the wait-free protocol right after its phase A, under the critical-section
/// protocol while it holds the lock as the round's first contributor.
pub fn stall(protocol: GvtProtocol, workers: usize, cfg: &PholdConfig, stall: Duration) -> StallReport {
    let report = Arc::new(Mutex::new(StallReport::default()));
    let fired = Arc::new(AtomicBool::new(false));
    let hook: Hook = {
        let report = Arc::clone(&report);
        let fired = Arc::clone(&fired);
        Arc::new(move |w: WorkerId, ev: HookEvent, shared: &Shared| {
            if w != WorkerId(0) || fired.load(Ordering::SeqCst) {
                return;
            }
            let hit = match ev {
                HookEvent::AfterStep {
                    outcome: StepOutcome::PhaseA { .. },
                } => protocol == GvtProtocol::WaitFree,
                HookEvent::InCriticalSection { remaining } => remaining == workers,
                _ => false,
            };
            if !hit {
                return;
            }
            fired.store(true, Ordering::SeqCst);
            let others = 1..shared.workers();
            let snap = |shared: &Shared| {
                let ex: Vec<u64> = others.clone().map(|o| shared.executed(WorkerId(o as u32))).collect();
                let co: Vec<u64> = others
                    .clone()
                    .map(|o| shared.progress(WorkerId(o as u32)).committed.load(Ordering::SeqCst))
                    .collect();
                let (spins, contribs) = match shared.coordinator() {
                    Coordinator::Fh(g) => (g.spin_tries(), g.contributions()),
                    Coordinator::WaitFree(_) => (0, 0),
                };
                (ex, co, spins, contribs, shared.published_gvt())
            };
            let before = snap(shared);
            thread::sleep(stall);
            let after = snap(shared);
            let mut r = report.lock().unwrap();
            r.fired = true;
            r.executed = before.0.into_iter().zip(after.0).collect();
            r.committed = before.1.into_iter().zip(after.1).collect();
            r.spin_tries = (before.2, after.2);
            r.contributions = (before.3, after.3);
            r.published = (before.4, after.4);
        })
    };
    let mut ecfg = engine_config(protocol, workers, super::TEN_MS, cfg.t_end);
    ecfg.record_commits = false;
    ecfg.hook = Some(hook);
    phold_engine(cfg, ecfg).run_threaded().unwrap();
    let r = report.lock().unwrap().clone();
    r
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
