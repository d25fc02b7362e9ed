//! Single-threaded lowest-timestamp-first execution of a model, used as the
//! reference every parallel run is compared against.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::event::{EventKey, LpId, Message, MessageId, VirtualTime};
use crate::model::{Emitter, Model};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OracleTrace {
    /// Executed events in execution order.
    pub events: Vec<(MessageId, VirtualTime)>,
    /// Final model checksum per LP.
    pub checksums: Vec<u64>,
}

impl OracleTrace {
    /// The executed set sorted by id, comparable with a parallel run's
    /// committed set.
    pub fn sorted(&self) -> Vec<(MessageId, VirtualTime)> {
        let mut v = self.events.clone();
        v.sort();
        v
    }
}

struct Pending(Message);

impl Pending {
    fn key(&self) -> EventKey {
        self.0.key()
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// Executes every event with timestamp below `t_end` in `(time, dst, id)`
/// order. `observe` sees each event right after it ran, together with the
/// states of all LPs.
pub fn run_sequential_with<M: Model>(
    model: &M,
    t_end: VirtualTime,
    mut observe: impl FnMut(&Message, &[M::State]),
) -> OracleTrace {
    let n = model.num_lps() as usize;
    let mut states = Vec::with_capacity(n);
    let mut seqs = vec![0u64; n];
    let mut heap = BinaryHeap::new();
    for l in 0..n {
        let lp = LpId(l as u32);
        let s = model.init_lp(lp);
        let mut out = Emitter::new(lp, VirtualTime::ZERO, &mut seqs[l]);
        model.initial_events(lp, &s, &mut out);
        heap.extend(out.into_messages().into_iter().map(|m| Reverse(Pending(m))));
        states.push(s);
    }

    let mut events = Vec::new();
    while let Some(Reverse(Pending(ev))) = heap.pop() {
        if ev.recv_time >= t_end {
            break;
        }
        let l = ev.dst.index();
        let mut out = Emitter::new(ev.dst, ev.recv_time, &mut seqs[l]);
        model.handle(&mut states[l], &ev, &mut out);
        heap.extend(out.into_messages().into_iter().map(|m| Reverse(Pending(m))));
        events.push((ev.id, ev.recv_time));
        observe(&ev, &states);
    }

    OracleTrace {
        events,
        checksums: states.iter().map(|s| model.checksum(s)).collect(),
    }
}

pub fn run_sequential<M: Model>(model: &M, t_end: VirtualTime) -> OracleTrace {
    run_sequential_with(model, t_end, |_, _| {})
}
