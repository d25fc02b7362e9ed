//! Virtual time, identities and the message type shared by every queue.

use std::cmp::Ordering;
use std::fmt;

/// A point on the logical time axis.
///
/// Finite values are non-negative; `VirtualTime::INFINITY` sorts after all of
/// them. NaN and negative values are rejected at construction, so the type is
/// totally ordered.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct VirtualTime(f64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0.0);
    pub const INFINITY: VirtualTime = VirtualTime(f64::INFINITY);

    /// Panics on NaN or negative input.
    pub fn new(t: f64) -> Self {
        Self::try_new(t).unwrap_or_else(|| panic!("invalid virtual time {t}"))
    }

    pub fn try_new(t: f64) -> Option<Self> {
        if t.is_nan() || t < 0.0 {
            None
        } else {
            // folds -0.0 into 0.0 so the bit pattern is order-preserving
            Some(VirtualTime(t + 0.0))
        }
    }

    pub fn as_f64(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// Bit pattern whose unsigned order matches the time order. Used by the
    /// atomic slots in the GVT coordinators.
    pub fn to_bits(self) -> u64 {
        self.0.to_bits()
    }

    pub fn from_bits(bits: u64) -> Self {
        Self::new(f64::from_bits(bits))
    }

    pub fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Eq for VirtualTime {}

impl std::hash::Hash for VirtualTime {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl PartialOrd for VirtualTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VirtualTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Debug for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<f64> for VirtualTime {
    fn from(t: f64) -> Self {
        VirtualTime::new(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LpId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct WorkerId(pub u32);

impl LpId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl WorkerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lp{}", self.0)
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// System-wide message identity: the sending LP plus that LP's send counter.
/// An anti-message carries the id of the event it cancels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MessageId {
    pub sender: LpId,
    pub seq: u64,
}

impl MessageId {
    pub fn new(sender: LpId, seq: u64) -> Self {
        MessageId { sender, seq }
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.sender, self.seq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Event,
    AntiEvent,
}

/// Position of a message in the deterministic event order:
/// `(recv_time, dst, id)` compared lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub time: VirtualTime,
    pub dst: LpId,
    pub id: MessageId,
}

impl EventKey {
    /// The greatest key whose time is `t`. Every key with `time <= t` compares
    /// less than or equal to it.
    pub fn last_at(t: VirtualTime) -> Self {
        EventKey {
            time: t,
            dst: LpId(u32::MAX),
            id: MessageId::new(LpId(u32::MAX), u64::MAX),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Message {
    pub id: MessageId,
    pub src: LpId,
    pub dst: LpId,
    pub send_time: VirtualTime,
    pub recv_time: VirtualTime,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl fmt::Debug for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            MessageKind::Event => "EVENT",
            MessageKind::AntiEvent => "ANTI",
        };
        write!(
            f,
            "{tag}{{id={}, {}->{}, send={}, recv={}}}",
            self.id, self.src, self.dst, self.send_time, self.recv_time
        )
    }
}

impl Message {
    /// Builds an event. Panics if `recv_time` is infinite or precedes
    /// `send_time`.
    pub fn event(
        id: MessageId,
        dst: LpId,
        send_time: VirtualTime,
        recv_time: VirtualTime,
        payload: Vec<u8>,
    ) -> Self {
        assert!(
            !recv_time.is_infinite() && recv_time >= send_time,
            "illegal timestamps: send {send_time}, recv {recv_time}"
        );
        Message {
            id,
            src: id.sender,
            dst,
            send_time,
            recv_time,
            kind: MessageKind::Event,
            payload,
        }
    }

    pub fn key(&self) -> EventKey {
        EventKey {
            time: self.recv_time,
            dst: self.dst,
            id: self.id,
        }
    }

    pub fn is_anti(&self) -> bool {
        self.kind == MessageKind::AntiEvent
    }
}

/// Returns the anti-message cancelling `m`.
///
/// Panics if `m` is itself an anti-message: cancelling a cancellation is a
/// kernel bug, not a recoverable condition.
pub fn make_antimessage(m: &Message) -> Message {
    assert_eq!(
        m.kind,
        MessageKind::Event,
        "anti-message requested for an anti-message {m:?}"
    );
    Message {
        kind: MessageKind::AntiEvent,
        payload: Vec::new(),
        ..m.clone()
    }
}

pub fn annihilates(a: &Message, b: &Message) -> bool {
    a.id == b.id && a.kind != b.kind
}

/// Total order over messages: event key first, then kind (an event sorts
/// before its own anti-message).
pub fn event_cmp(a: &Message, b: &Message) -> Ordering {
    a.key().cmp(&b.key()).then(a.kind.cmp(&b.kind))
}
