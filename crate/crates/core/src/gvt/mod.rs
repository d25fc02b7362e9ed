//! GVT coordinators.
//!
//! Both protocols run inside the worker main loop: once per iteration the
//! worker calls the protocol's step function, which performs a bounded amount
//! of work against the kernel through [`KernelOps`].

mod fh;
mod waitfree;

use std::sync::atomic::{AtomicU64, Ordering};

pub use fh::{FhLocal, FhShared};
pub use waitfree::{compute_global_min, Phase, WfLocal, WfShared};

use crate::error::KernelError;
use crate::event::VirtualTime;

/// What a GVT protocol needs from the worker it runs on.
pub trait KernelOps {
    /// Drains the worker's inbox into its LPs and executes any rollbacks this
    /// raises. Returns the minimum timestamp of anti-messages sent while doing
    /// so (infinity if none).
    fn incorporate(&mut self) -> Result<VirtualTime, KernelError>;

    /// Minimum pending timestamp over the worker's LPs.
    fn local_min(&self) -> VirtualTime;

    /// Executes the next event, if any, and sends its output. Returns whether
    /// an event ran and the minimum timestamp sent.
    fn execute_and_send(&mut self) -> Result<(bool, VirtualTime), KernelError>;
}

/// Which arm of a protocol step ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// No round active, nothing to do.
    Idle,
    /// A round is active but this worker's guard is not yet satisfied.
    Waiting,
    /// Wait-free: back to phase A after the flag reset.
    EndReset { round: u64 },
    PhaseA { round: u64, min_a: VirtualTime },
    PhaseSend { round: u64, executed: bool },
    PhaseB {
        round: u64,
        min_a: VirtualTime,
        min_b: VirtualTime,
        mints: VirtualTime,
    },
    Aware {
        round: u64,
        gvt: VirtualTime,
        flag_reset: bool,
    },
    /// Critical-section protocol: local minimum posted, GVT published if this
    /// worker was the last contributor.
    Contributed {
        round: u64,
        local_min: VirtualTime,
        published: Option<VirtualTime>,
    },
}

impl StepOutcome {
    /// GVT computed by this step, if any.
    pub fn gvt(&self) -> Option<VirtualTime> {
        match *self {
            StepOutcome::Aware { gvt, .. } => Some(gvt),
            StepOutcome::Contributed { published, .. } => published,
            _ => None,
        }
    }

    /// Whether this step closed a round (exactly one step per round does).
    pub fn completes_round(&self) -> bool {
        matches!(
            self,
            StepOutcome::Aware { flag_reset: true, .. }
                | StepOutcome::Contributed { published: Some(_), .. }
        )
    }
}

/// Atomic cell holding a virtual time, updated with `fetch_max` so readers
/// never see it move backwards.
#[derive(Debug)]
pub struct TimeCell(AtomicU64);

impl TimeCell {
    pub fn new(t: VirtualTime) -> Self {
        TimeCell(AtomicU64::new(t.to_bits()))
    }

    pub fn load(&self) -> VirtualTime {
        VirtualTime::from_bits(self.0.load(Ordering::SeqCst))
    }

    pub fn store(&self, t: VirtualTime) {
        self.0.store(t.to_bits(), Ordering::SeqCst);
    }

    /// Raises the cell to `t`; returns the previous value.
    pub fn raise(&self, t: VirtualTime) -> VirtualTime {
        VirtualTime::from_bits(self.0.fetch_max(t.to_bits(), Ordering::SeqCst))
    }
}

/// One cache line per slot so workers posting their minima do not contend.
#[repr(align(128))]
#[derive(Debug)]
pub(crate) struct Padded<T>(pub T);

/// Shared state of whichever coordinator a run uses.
#[derive(Debug)]
pub enum Coordinator {
    WaitFree(WfShared),
    Fh(FhShared),
}

impl Coordinator {
    pub fn workers(&self) -> usize {
        match self {
            Coordinator::WaitFree(s) => s.workers(),
            Coordinator::Fh(s) => s.workers(),
        }
    }

    pub fn rounds_started(&self) -> u64 {
        match self {
            Coordinator::WaitFree(s) => s.current_round(),
            Coordinator::Fh(s) => s.current_round(),
        }
    }

    pub fn spin_tries(&self) -> u64 {
        match self {
            Coordinator::WaitFree(_) => 0,
            Coordinator::Fh(s) => s.spin_tries(),
        }
    }

    /// True while a round is in progress.
    pub fn round_active(&self) -> bool {
        match self {
            Coordinator::WaitFree(s) => s.flag(),
            Coordinator::Fh(s) => s.remaining() > 0,
        }
    }
}

/// Per-worker protocol state matching [`Coordinator`].
#[derive(Debug, Clone)]
pub enum ProtocolLocal {
    WaitFree(WfLocal),
    Fh(FhLocal),
}

impl ProtocolLocal {
    pub fn for_coordinator(c: &Coordinator) -> Self {
        match c {
            Coordinator::WaitFree(_) => ProtocolLocal::WaitFree(WfLocal::new()),
            Coordinator::Fh(_) => ProtocolLocal::Fh(FhLocal::new()),
        }
    }
}
