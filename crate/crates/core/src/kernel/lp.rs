//! One logical process: its event queue, model state, snapshots and the log
//! of messages it sent (needed to build anti-messages on rollback).

use std::collections::VecDeque;

use crate::error::KernelError;
use crate::event::{make_antimessage, EventKey, LpId, Message, VirtualTime};
use crate::model::{Emitter, Model};
use crate::queue::{EventQueue, IncorporationReport};

#[derive(Clone)]
struct Snapshot<S> {
    /// Key of the last event folded into `state`; `None` for the initial state.
    after: Option<EventKey>,
    state: S,
    next_seq: u64,
}

impl<S> Snapshot<S> {
    fn time(&self) -> VirtualTime {
        self.after.map_or(VirtualTime::ZERO, |k| k.time)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RollbackReport {
    pub anti_messages: Vec<Message>,
    /// Events moved back to the pending set by this call.
    pub undone: usize,
    pub coasted: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReclaimReport {
    pub events: usize,
    pub snapshots: usize,
    pub outputs: usize,
}

impl std::ops::AddAssign for ReclaimReport {
    fn add_assign(&mut self, o: Self) {
        self.events += o.events;
        self.snapshots += o.snapshots;
        self.outputs += o.outputs;
    }
}

pub struct LpState<S> {
    id: LpId,
    queue: EventQueue,
    state: S,
    next_seq: u64,
    snapshots: VecDeque<Snapshot<S>>,
    output_log: VecDeque<(EventKey, Message)>,
    checkpoint_interval: u32,
    since_checkpoint: u32,
    pending_rollback: Option<EventKey>,
}

impl<S: Clone> LpState<S> {
    /// Builds the LP and returns the initial events it schedules. The caller
    /// routes them like any other send.
    pub fn new<M>(model: &M, id: LpId, checkpoint_interval: u32) -> (Self, Vec<Message>)
    where
        M: Model<State = S>,
    {
        assert!(checkpoint_interval >= 1);
        let state = model.init_lp(id);
        let mut next_seq = 0;
        let mut out = Emitter::new(id, VirtualTime::ZERO, &mut next_seq);
        model.initial_events(id, &state, &mut out);
        let initial = out.into_messages();
        let snapshots = VecDeque::from([Snapshot {
            after: None,
            state: state.clone(),
            next_seq,
        }]);
        let lp = LpState {
            id,
            queue: EventQueue::new(id),
            state,
            next_seq,
            snapshots,
            output_log: VecDeque::new(),
            checkpoint_interval,
            since_checkpoint: 0,
            pending_rollback: None,
        };
        (lp, initial)
    }

    pub fn id(&self) -> LpId {
        self.id
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn clock(&self) -> VirtualTime {
        self.queue.clock()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn snapshot_times(&self) -> Vec<VirtualTime> {
        self.snapshots.iter().map(Snapshot::time).collect()
    }

    pub fn output_log_len(&self) -> usize {
        self.output_log.len()
    }

    pub fn pending_rollback(&self) -> Option<EventKey> {
        self.pending_rollback
    }

    /// Incorporates messages addressed to this LP. A required rollback is
    /// recorded and must be carried out with [`LpState::rollback`] before the
    /// next event executes.
    pub fn incorporate(
        &mut self,
        msgs: impl IntoIterator<Item = Message>,
    ) -> Result<IncorporationReport, KernelError> {
        let report = self.queue.incorporate(msgs)?;
        if let Some(b) = report.rollback_to {
            self.pending_rollback = Some(self.pending_rollback.map_or(b, |p| p.min(b)));
        }
        Ok(report)
    }

    /// Executes the next pending event if it lies strictly before `horizon`.
    /// Returns its key and the messages it produced, which the caller sends.
    pub fn execute_next<M>(
        &mut self,
        model: &M,
        horizon: VirtualTime,
    ) -> Option<(EventKey, Vec<Message>)>
    where
        M: Model<State = S>,
    {
        debug_assert!(self.pending_rollback.is_none(), "rollback pending on {}", self.id);
        if self.queue.peek_next()?.recv_time >= horizon {
            return None;
        }
        let event = self.queue.pop_next().expect("peeked");
        let key = event.key();
        let mut out = Emitter::new(self.id, event.recv_time, &mut self.next_seq);
        model.handle(&mut self.state, event, &mut out);
        let outputs = out.into_messages();
        self.output_log
            .extend(outputs.iter().map(|m| (key, m.clone())));

        self.since_checkpoint += 1;
        if self.since_checkpoint >= self.checkpoint_interval {
            self.since_checkpoint = 0;
            self.snapshots.push_back(Snapshot {
                after: Some(key),
                state: self.state.clone(),
                next_seq: self.next_seq,
            });
        }
        Some((key, outputs))
    }

    /// Undoes every processed event with key `>= bound`: restores the newest
    /// snapshot preceding `bound`, re-executes (without sending) the events
    /// between that snapshot and `bound`, and returns anti-messages for every
    /// message the undone events sent.
    pub fn rollback<M>(&mut self, model: &M, bound: EventKey) -> Result<RollbackReport, KernelError>
    where
        M: Model<State = S>,
    {
        let undone = self.queue.refill(bound);
        self.pending_rollback = None;

        let keep = self
            .snapshots
            .iter()
            .rposition(|s| s.after.is_none_or(|k| k < bound))
            .ok_or(KernelError::MissingSnapshot {
                lp: self.id,
                target: bound,
            })?;
        self.snapshots.truncate(keep + 1);
        let snap = self.snapshots.back().expect("kept one");
        self.state = snap.state.clone();
        self.next_seq = snap.next_seq;

        // coast forward over events folded in after the snapshot
        let mut coasted = 0;
        let from = snap.after;
        for event in self.queue.processed() {
            if from.is_some_and(|k| event.key() <= k) {
                continue;
            }
            let mut sink = Emitter::new(self.id, event.recv_time, &mut self.next_seq);
            model.handle(&mut self.state, event, &mut sink);
            coasted += 1;
        }
        self.since_checkpoint = coasted as u32;

        let mut anti_messages = Vec::new();
        while self.output_log.back().is_some_and(|(k, _)| *k >= bound) {
            let (_, m) = self.output_log.pop_back().expect("checked non-empty");
            anti_messages.push(make_antimessage(&m));
        }
        anti_messages.reverse();

        Ok(RollbackReport {
            anti_messages,
            undone,
            coasted,
        })
    }

    /// Rolls back every event with timestamp greater than `to`.
    pub fn rollback_to_time<M>(&mut self, model: &M, to: VirtualTime) -> Result<RollbackReport, KernelError>
    where
        M: Model<State = S>,
    {
        self.rollback(model, EventKey::last_at(to))
    }

    /// Reclaims history that no rollback at or above `gvt` can need. Each
    /// discarded processed event is passed to `on_commit`.
    pub fn fossil_collect(
        &mut self,
        gvt: VirtualTime,
        on_commit: impl FnMut(&Message),
    ) -> Result<ReclaimReport, KernelError> {
        self.queue.check_unmatched(gvt)?;
        // newest snapshot strictly older than gvt: a rollback to exactly gvt
        // may still need it
        let keep = self
            .snapshots
            .iter()
            .rposition(|s| s.after.is_none_or(|k| k.time < gvt))
            .unwrap_or(0);
        let snapshots = keep;
        self.snapshots.drain(..keep);
        let horizon = self.snapshots.front().and_then(|s| s.after);
        let events = match horizon {
            Some(h) => self.queue.fossil_collect(h, on_commit),
            None => 0,
        };
        let before = self.output_log.len();
        while self.output_log.front().is_some_and(|(k, _)| k.time < gvt) {
            self.output_log.pop_front();
        }
        Ok(ReclaimReport {
            events,
            snapshots,
            outputs: before - self.output_log.len(),
        })
    }

    /// Commits every processed event. Only valid once GVT has passed all of
    /// them, i.e. at the end of a run.
    pub fn commit_all(&mut self, on_commit: impl FnMut(&Message)) -> usize {
        let n = self
            .queue
            .fossil_collect(EventKey::last_at(VirtualTime::INFINITY), on_commit);
        self.output_log.clear();
        if let Some(last) = self.snapshots.pop_back() {
            self.snapshots.clear();
            self.snapshots.push_back(last);
        }
        n
    }
}
