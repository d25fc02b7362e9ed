//! The interface a simulation model implements to run on the kernel.

use crate::event::{LpId, Message, MessageId, VirtualTime};

/// A simulation model: per-LP state plus an event handler.
///
/// Handlers must be pure functions of `(state, event)`: any randomness has to
/// be derived from the event itself (for example from its `MessageId`) so that
/// re-executing an event after a rollback reproduces the same state and the
/// same outputs.
pub trait Model: Send + Sync + 'static {
    type State: Clone + Send;

    fn num_lps(&self) -> u32;

    fn init_lp(&self, lp: LpId) -> Self::State;

    /// Schedules the LP's initial events. `out.now()` is zero.
    fn initial_events(&self, lp: LpId, state: &Self::State, out: &mut Emitter);

    fn handle(&self, state: &mut Self::State, event: &Message, out: &mut Emitter);

    /// Digest of the LP state, used to compare runs.
    fn checksum(&self, state: &Self::State) -> u64;
}

/// Collects the messages an event handler schedules, stamping them with ids
/// drawn from the LP's send counter.
pub struct Emitter<'a> {
    src: LpId,
    now: VirtualTime,
    next_seq: &'a mut u64,
    out: Vec<Message>,
}

impl<'a> Emitter<'a> {
    pub fn new(src: LpId, now: VirtualTime, next_seq: &'a mut u64) -> Self {
        Emitter {
            src,
            now,
            next_seq,
            out: Vec::new(),
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn src(&self) -> LpId {
        self.src
    }

    /// Panics if `at` precedes the current time.
    pub fn schedule(&mut self, dst: LpId, at: VirtualTime, payload: Vec<u8>) -> MessageId {
        let id = MessageId::new(self.src, *self.next_seq);
        *self.next_seq += 1;
        self.out.push(Message::event(id, dst, self.now, at, payload));
        id
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.out
    }
}
