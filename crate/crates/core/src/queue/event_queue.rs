//! Per-LP event queue: processed history plus pending set.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::error::KernelError;
use crate::event::{EventKey, LpId, Message, MessageId, MessageKind, VirtualTime};

/// What a batch of incoming messages did to one LP's queue.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IncorporationReport {
    /// Earliest key whose processing must be undone, if any message forced a
    /// rollback. Events at or after this key have already been moved back to
    /// the pending set.
    pub rollback_to: Option<EventKey>,
    pub inserted: usize,
    pub annihilated: usize,
    pub stragglers: usize,
}

#[derive(Debug)]
pub struct EventQueue {
    lp: LpId,
    processed: VecDeque<Message>,
    unprocessed: BTreeMap<EventKey, Message>,
    /// Anti-messages that arrived before their event.
    unmatched_anti: HashMap<MessageId, Message>,
    /// Key of the newest fossil-collected event.
    floor: Option<EventKey>,
}

impl EventQueue {
    pub fn new(lp: LpId) -> Self {
        EventQueue {
            lp,
            processed: VecDeque::new(),
            unprocessed: BTreeMap::new(),
            unmatched_anti: HashMap::new(),
            floor: None,
        }
    }

    pub fn lp(&self) -> LpId {
        self.lp
    }

    /// Key of the most recently executed event still relevant to ordering.
    pub fn last_executed(&self) -> Option<EventKey> {
        self.processed.back().map(Message::key).or(self.floor)
    }

    /// Local clock: time of the last executed event, zero before any.
    pub fn clock(&self) -> VirtualTime {
        self.last_executed().map_or(VirtualTime::ZERO, |k| k.time)
    }

    pub fn peek_next(&self) -> Option<&Message> {
        self.unprocessed.values().next()
    }

    /// Smallest pending timestamp, counting unmatched anti-messages.
    pub fn min_pending_time(&self) -> VirtualTime {
        let queued = self
            .unprocessed
            .keys()
            .next()
            .map_or(VirtualTime::INFINITY, |k| k.time);
        self.unmatched_anti
            .values()
            .map(|m| m.recv_time)
            .fold(queued, VirtualTime::min)
    }

    pub fn processed(&self) -> impl ExactSizeIterator<Item = &Message> + DoubleEndedIterator {
        self.processed.iter()
    }

    pub fn unprocessed(&self) -> impl ExactSizeIterator<Item = &Message> {
        self.unprocessed.values()
    }

    pub fn unmatched_anti(&self) -> impl Iterator<Item = &Message> {
        self.unmatched_anti.values()
    }

    pub fn processed_len(&self) -> usize {
        self.processed.len()
    }

    pub fn unprocessed_len(&self) -> usize {
        self.unprocessed.len()
    }

    /// Inserts a message produced locally (initial events) without straggler
    /// checks.
    pub fn insert_unprocessed(&mut self, m: Message) {
        debug_assert_eq!(m.kind, MessageKind::Event);
        self.unprocessed.insert(m.key(), m);
    }

    /// Moves the next pending event to the processed list and returns it.
    pub fn pop_next(&mut self) -> Option<&Message> {
        let (_, m) = self.unprocessed.pop_first()?;
        debug_assert!(self.last_executed().is_none_or(|k| k < m.key()));
        self.processed.push_back(m);
        self.processed.back()
    }

    /// Moves every processed event with key `>= bound` back to the pending set.
    /// Returns how many moved.
    pub fn refill(&mut self, bound: EventKey) -> usize {
        let mut moved = 0;
        while self.processed.back().is_some_and(|m| m.key() >= bound) {
            let m = self.processed.pop_back().expect("checked non-empty");
            self.unprocessed.insert(m.key(), m);
            moved += 1;
        }
        moved
    }

    pub fn incorporate(
        &mut self,
        msgs: impl IntoIterator<Item = Message>,
    ) -> Result<IncorporationReport, KernelError> {
        let mut report = IncorporationReport::default();
        for m in msgs {
            if m.dst != self.lp {
                return Err(self.corruption(format!("{m:?} delivered to wrong LP")));
            }
            let bound = match m.kind {
                MessageKind::Event => self.incorporate_event(m, &mut report)?,
                MessageKind::AntiEvent => self.incorporate_anti(m, &mut report)?,
            };
            if let Some(b) = bound {
                report.rollback_to = Some(report.rollback_to.map_or(b, |r| r.min(b)));
            }
        }
        Ok(report)
    }

    fn incorporate_event(
        &mut self,
        m: Message,
        report: &mut IncorporationReport,
    ) -> Result<Option<EventKey>, KernelError> {
        if let Some(anti) = self.unmatched_anti.remove(&m.id) {
            if anti.key() != m.key() {
                return Err(self.corruption(format!("{anti:?} does not match {m:?}")));
            }
            report.annihilated += 1;
            return Ok(None);
        }
        let key = m.key();
        if self.unprocessed.contains_key(&key) {
            return Err(self.corruption(format!("duplicate event {m:?}")));
        }
        let straggler = self.last_executed().is_some_and(|last| key < last);
        self.unprocessed.insert(key, m);
        report.inserted += 1;
        if straggler {
            report.stragglers += 1;
            self.refill(key);
            Ok(Some(key))
        } else {
            Ok(None)
        }
    }

    fn incorporate_anti(
        &mut self,
        m: Message,
        report: &mut IncorporationReport,
    ) -> Result<Option<EventKey>, KernelError> {
        let key = m.key();
        if self.unprocessed.remove(&key).is_some() {
            report.annihilated += 1;
            return Ok(None);
        }
        if self.processed_contains(&key) {
            self.refill(key);
            self.unprocessed.remove(&key);
            report.annihilated += 1;
            return Ok(Some(key));
        }
        if self.floor.is_some_and(|f| key <= f) {
            return Err(self.corruption(format!("{m:?} targets a fossil-collected event")));
        }
        if self.unmatched_anti.insert(m.id, m).is_some() {
            return Err(self.corruption("duplicate unmatched anti-message".into()));
        }
        Ok(None)
    }

    fn processed_contains(&self, key: &EventKey) -> bool {
        self.processed
            .binary_search_by(|p| p.key().cmp(key))
            .is_ok()
    }

    /// Discards processed events with key `<= upto`, oldest first, handing
    /// each to `on_commit`.
    pub fn fossil_collect(&mut self, upto: EventKey, mut on_commit: impl FnMut(&Message)) -> usize {
        let mut n = 0;
        while self.processed.front().is_some_and(|m| m.key() <= upto) {
            let m = self.processed.pop_front().expect("checked non-empty");
            on_commit(&m);
            self.floor = Some(m.key());
            n += 1;
        }
        n
    }

    /// Fails if an unmatched anti-message lies below `gvt`: its event can no
    /// longer exist anywhere in the system.
    pub fn check_unmatched(&self, gvt: VirtualTime) -> Result<(), KernelError> {
        match self.unmatched_anti.values().find(|m| m.recv_time < gvt) {
            Some(m) => Err(self.corruption(format!("{m:?} never matched an event"))),
            None => Ok(()),
        }
    }

    fn corruption(&self, detail: String) -> KernelError {
        KernelError::ProtocolCorruption {
            lp: self.lp,
            detail,
        }
    }
}
