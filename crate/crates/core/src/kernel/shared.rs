use std::sync::atomic::{AtomicBool, AtomicU64, Ordering::SeqCst};
use std::sync::Arc;

use crate::event::{LpId, Message, VirtualTime, WorkerId};
use crate::gvt::{Coordinator, FhShared, Padded, StepOutcome, WfShared};
use crate::queue::Inbox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GvtProtocol {
    /// Wait-free multi-phase protocol.
    #[serde(rename = "wf")]
    WaitFree,
    /// Critical-section baseline.
    #[serde(rename = "fh")]
    Fh,
}

impl std::fmt::Display for GvtProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GvtProtocol::WaitFree => "wf",
            GvtProtocol::Fh => "fh",
        })
    }
}

/// Points at which a test can observe or delay a worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HookEvent {
    AfterStep { outcome: StepOutcome },
    /// Critical-section protocol only: the lock is held; `remaining` workers
    /// (including this one) have yet to contribute.
    InCriticalSection { remaining: usize },
    /// A newer GVT became known to this worker and history below it was
    /// committed.
    Commit { gvt: VirtualTime },
}

pub type Hook = Arc<dyn Fn(WorkerId, HookEvent, &Shared) + Send + Sync>;

#[derive(Debug, Default)]
pub struct Progress {
    pub executed: AtomicU64,
    pub iterations: AtomicU64,
    pub committed: AtomicU64,
}

/// Everything workers share: inboxes, the GVT coordinator and a few audit
/// counters. LP `l` lives on worker `l % workers`.
pub struct Shared {
    workers: usize,
    inboxes: Box<[Padded<Inbox<Message>>]>,
    coordinator: Coordinator,
    t_end: VirtualTime,
    progress: Box<[Padded<Progress>]>,
    safety_violations: AtomicU64,
    abort: AtomicBool,
    audit: bool,
    hook: Option<Hook>,
}

impl Shared {
    pub fn new(
        workers: usize,
        protocol: GvtProtocol,
        t_end: VirtualTime,
        audit: bool,
        hook: Option<Hook>,
    ) -> Self {
        assert!(workers >= 1);
        let coordinator = match protocol {
            GvtProtocol::WaitFree => Coordinator::WaitFree(WfShared::new(workers)),
            GvtProtocol::Fh => Coordinator::Fh(FhShared::new(workers)),
        };
        Shared {
            workers,
            inboxes: (0..workers).map(|_| Padded(Inbox::new())).collect(),
            coordinator,
            t_end,
            progress: (0..workers).map(|_| Padded(Progress::default())).collect(),
            safety_violations: AtomicU64::new(0),
            abort: AtomicBool::new(false),
            audit,
            hook,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn owner(&self, lp: LpId) -> WorkerId {
        WorkerId((lp.index() % self.workers) as u32)
    }

    pub fn local_index(&self, lp: LpId) -> usize {
        lp.index() / self.workers
    }

    /// Enqueues `m` in its destination worker's inbox.
    pub fn send(&self, m: Message) {
        self.inboxes[self.owner(m.dst).index()].0.push(m);
    }

    pub fn inbox(&self, w: WorkerId) -> &Inbox<Message> {
        &self.inboxes[w.index()].0
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn published_gvt(&self) -> VirtualTime {
        match &self.coordinator {
            Coordinator::WaitFree(g) => g.published(),
            Coordinator::Fh(g) => g.published(),
        }
    }

    pub fn gvt_regressions(&self) -> u64 {
        match &self.coordinator {
            Coordinator::WaitFree(g) => g.regressions(),
            Coordinator::Fh(g) => g.regressions(),
        }
    }

    pub fn t_end(&self) -> VirtualTime {
        self.t_end
    }

    pub fn audit(&self) -> bool {
        self.audit
    }

    pub fn progress(&self, w: WorkerId) -> &Progress {
        &self.progress[w.index()].0
    }

    pub fn executed(&self, w: WorkerId) -> u64 {
        self.progress(w).executed.load(SeqCst)
    }

    pub fn safety_violations(&self) -> u64 {
        self.safety_violations.load(SeqCst)
    }

    pub(crate) fn record_safety_violation(&self) {
        self.safety_violations.fetch_add(1, SeqCst);
    }

    pub fn abort(&self) {
        self.abort.store(true, SeqCst);
    }

    pub fn aborted(&self) -> bool {
        self.abort.load(SeqCst)
    }

    pub(crate) fn fire(&self, w: WorkerId, ev: HookEvent) {
        if let Some(h) = &self.hook {
            h(w, ev, self);
        }
    }

    pub(crate) fn has_hook(&self) -> bool {
        self.hook.is_some()
    }
}
