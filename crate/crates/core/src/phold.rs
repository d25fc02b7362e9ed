//! PHOLD variant with memory allocation and deallocation.
//!
//! Every LP owns a list of byte buffers. A DEALLOC event frees a random
//! buffer, sweeps over part of the remaining state, schedules the next
//! DEALLOC for itself and, when a buffer was actually freed, an ALLOC at a
//! uniformly random other LP. An ALLOC adds a buffer and sweeps. The global
//! buffer count therefore stays put, apart from ALLOCs still in flight.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::event::{LpId, Message, MessageId, VirtualTime};
use crate::model::{Emitter, Model};

pub const DEALLOC: u8 = 0;
pub const ALLOC: u8 = 1;

/// Smallest delay between an event and anything it schedules.
pub const MIN_DELAY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByteRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PholdConfig {
    pub num_lps: u32,
    pub initial_buffers_per_lp: u32,
    /// Inclusive bounds on the size of a newly allocated buffer.
    pub buffer_size_range: ByteRange,
    pub read_fraction: f64,
    pub write_fraction: f64,
    pub mean_delay: f64,
    pub t_end: f64,
    pub seed: u64,
    /// LPs holding more buffers than they started with schedule their own
    /// DEALLOCs more often (and less often with fewer), so activity clusters
    /// on memory-heavy LPs. The rate factor is clamped to [0.25, 4].
    pub memory_weighted: bool,
}

impl Default for PholdConfig {
    fn default() -> Self {
        PholdConfig {
            num_lps: 32,
            initial_buffers_per_lp: 64,
            buffer_size_range: ByteRange {
                min: 4 << 10,
                max: 64 << 10,
            },
            read_fraction: 0.2,
            write_fraction: 0.1,
            mean_delay: 1.0,
            t_end: 100.0,
            seed: 1,
            memory_weighted: false,
        }
    }
}

impl PholdConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.num_lps < 1 {
            return bad("num_lps must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return bad("read_fraction must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return bad("write_fraction must be in [0, 1]");
        }
        if !(self.mean_delay.is_finite() && self.mean_delay > 0.0) {
            return bad("mean_delay must be positive and finite");
        }
        if !(self.t_end >= 0.0) {
            return bad("t_end must be non-negative");
        }
        let r = self.buffer_size_range;
        if r.min == 0 || r.min > r.max {
            return bad("buffer_size_range needs 0 < min <= max");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: PholdConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn t_end(&self) -> VirtualTime {
        VirtualTime::new(self.t_end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PholdState {
    /// Shared on clone, copied on first write.
    pub buffers: Vec<Arc<Vec<u8>>>,
    /// Rolling digest over every sweep and allocation.
    pub checksum: u64,
}

impl PholdState {
    pub fn buffer_count(&self) -> usize {
        self.buffers.len()
    }

    pub fn total_bytes(&self) -> usize {
        self.buffers.iter().map(|b| b.len()).sum()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_049b_1331_11eb);
    z ^ (z >> 31)
}

fn mix(h: u64, v: u64) -> u64 {
    splitmix(h.rotate_left(23) ^ v)
}

// stream tags keep LP setup draws apart from event draws
const INIT_STATE: u64 = 1 << 62;
const INIT_EVENTS: u64 = 2 << 62;

fn stream(seed: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(splitmix(seed), key))
}

/// The random stream of one event, a pure function of the seed and the id.
pub fn event_rng(seed: u64, id: MessageId) -> ChaCha8Rng {
    stream(seed, (u64::from(id.sender.0) << 40) ^ id.seq)
}

/// Splits the span of `len` bytes starting at flat offset `start` (wrapping
/// at the end of the state) into `(buffer, lo, hi)` pieces.
pub fn sweep_segments(lens: &[usize], start: usize, len: usize) -> Vec<(usize, usize, usize)> {
    let total: usize = lens.iter().sum();
    let mut out = Vec::new();
    if total == 0 || len == 0 {
        return out;
    }
    let mut left = len.min(total);
    let mut pos = start % total;
    let mut i = 0;
    while pos >= lens[i] {
        pos -= lens[i];
        i += 1;
    }
    while left > 0 {
        let take = (lens[i] - pos).min(left);
        if take > 0 {
            out.push((i, pos, pos + take));
        }
        left -= take;
        pos = 0;
        i = (i + 1) % lens.len();
    }
    out
}

pub struct PholdModel {
    cfg: PholdConfig,
    delay: Exp<f64>,
}

impl PholdModel {
    pub fn new(cfg: PholdConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let delay = Exp::new(1.0 / cfg.mean_delay)
            .map_err(|e| ConfigError::Invalid(format!("mean_delay: {e}")))?;
        Ok(PholdModel { cfg, delay })
    }

    pub fn config(&self) -> &PholdConfig {
        &self.cfg
    }

    fn new_buffer(&self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let r = self.cfg.buffer_size_range;
        let size = rng.random_range(r.min..=r.max);
        vec![rng.random::<u8>(); size]
    }

    fn next_delay(&self, rng: &mut ChaCha8Rng, scale: f64) -> f64 {
        MIN_DELAY + self.delay.sample(rng) * scale
    }

    /// Mean-delay multiplier of the self-scheduled DEALLOC chain.
    fn dealloc_scale(&self, state: &PholdState) -> f64 {
        if !self.cfg.memory_weighted {
            return 1.0;
        }
        let initial = f64::from(self.cfg.initial_buffers_per_lp.max(1));
        let now = state.buffer_count().max(1) as f64;
        (initial / now).clamp(0.25, 4.0)
    }

    fn sweep(&self, state: &mut PholdState, rng: &mut ChaCha8Rng) {
        let lens: Vec<usize> = state.buffers.iter().map(|b| b.len()).collect();
        let total: usize = lens.iter().sum();
        if total == 0 {
            state.checksum = mix(state.checksum, 0);
            return;
        }

        let read_len = (total as f64 * self.cfg.read_fraction) as usize;
        let start = rng.random_range(0..total);
        let mut acc = 0u64;
        for (i, lo, hi) in sweep_segments(&lens, start, read_len) {
            acc = state.buffers[i][lo..hi]
                .iter()
                .fold(acc, |a, &b| a.wrapping_add(u64::from(b)));
        }
        state.checksum = mix(state.checksum, acc);

        let write_len = (total as f64 * self.cfg.write_fraction) as usize;
        let start = rng.random_range(0..total);
        let value: u8 = rng.random();
        for (i, lo, hi) in sweep_segments(&lens, start, write_len) {
            Arc::make_mut(&mut state.buffers[i])[lo..hi].fill(value);
        }
        state.checksum = mix(
            state.checksum,
            (start as u64) ^ ((write_len as u64) << 24) ^ (u64::from(value) << 56),
        );
    }
}

impl Model for PholdModel {
    type State = PholdState;

    fn num_lps(&self) -> u32 {
        self.cfg.num_lps
    }

    fn init_lp(&self, lp: LpId) -> PholdState {
        let mut rng = stream(self.cfg.seed, INIT_STATE ^ u64::from(lp.0));
        let buffers = (0..self.cfg.initial_buffers_per_lp)
            .map(|_| Arc::new(self.new_buffer(&mut rng)))
            .collect();
        PholdState { buffers, checksum: 0 }
    }

    fn initial_events(&self, lp: LpId, state: &PholdState, out: &mut Emitter) {
        let mut rng = stream(self.cfg.seed, INIT_EVENTS ^ u64::from(lp.0));
        let at = out.now().as_f64() + self.next_delay(&mut rng, self.dealloc_scale(state));
        out.schedule(lp, VirtualTime::new(at), vec![DEALLOC]);
    }

    fn handle(&self, state: &mut PholdState, event: &Message, out: &mut Emitter) {
        let mut rng = event_rng(self.cfg.seed, event.id);
        let now = out.now().as_f64();
        let me = out.src();
        match event.payload.first().copied() {
            Some(DEALLOC) => {
                let freed = if state.buffers.is_empty() {
                    false
                } else {
                    let i = rng.random_range(0..state.buffers.len());
                    state.buffers.swap_remove(i);
                    true
                };
                self.sweep(state, &mut rng);
                if freed && self.cfg.num_lps > 1 {
                    let mut dst = rng.random_range(0..self.cfg.num_lps - 1);
                    if dst >= me.0 {
                        dst += 1;
                    }
                    let at = now + self.next_delay(&mut rng, 1.0);
                    out.schedule(LpId(dst), VirtualTime::new(at), vec![ALLOC]);
                } else if freed {
                    let at = now + self.next_delay(&mut rng, 1.0);
                    out.schedule(me, VirtualTime::new(at), vec![ALLOC]);
                }
                let at = now + self.next_delay(&mut rng, self.dealloc_scale(state));
                out.schedule(me, VirtualTime::new(at), vec![DEALLOC]);
            }
            Some(ALLOC) => {
                let buf = self.new_buffer(&mut rng);
                state.buffers.push(Arc::new(buf));
                self.sweep(state, &mut rng);
            }
            other => panic!("unknown PHOLD event kind {other:?}"),
        }
    }

    fn checksum(&self, state: &PholdState) -> u64 {
        mix(
            mix(state.checksum, state.buffer_count() as u64),
            state.total_bytes() as u64,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PholdConfig {
        PholdConfig {
            num_lps: 4,
            initial_buffers_per_lp: 2,
            buffer_size_range: ByteRange { min: 16, max: 64 },
            ..PholdConfig::default()
        }
    }

    fn init(m: &PholdModel) -> (Vec<PholdState>, Vec<Message>) {
        let mut states = Vec::new();
        let mut msgs = Vec::new();
        for l in 0..m.num_lps() {
            let s = m.init_lp(LpId(l));
            let mut seq = 0;
            let mut e = Emitter::new(LpId(l), VirtualTime::ZERO, &mut seq);
            m.initial_events(LpId(l), &s, &mut e);
            msgs.extend(e.into_messages());
            states.push(s);
        }
        (states, msgs)
    }

    fn event(dst: u32, t: f64, kind: u8) -> Message {
        Message::event(
            MessageId::new(LpId(dst), 99),
            LpId(dst),
            VirtualTime::ZERO,
            VirtualTime::new(t),
            vec![kind],
        )
    }

    #[test]
    fn init_shapes() {
        let m = PholdModel::new(small()).unwrap();
        let (states, msgs) = init(&m);
        assert_eq!(states.len(), 4);
        assert_eq!(msgs.len(), 4);
        for (l, msg) in msgs.iter().enumerate() {
            assert_eq!(msg.dst, LpId(l as u32));
            assert_eq!(msg.payload, vec![DEALLOC]);
            assert!(msg.recv_time.as_f64() >= MIN_DELAY);
        }
        assert!(states.iter().all(|s| s.buffer_count() == 2));
    }

    #[test]
    fn init_is_deterministic() {
        let m = PholdModel::new(small()).unwrap();
        assert_eq!(init(&m), init(&m));
        let other = PholdModel::new(PholdConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(init(&m).1, init(&other).1);
    }

    #[test]
    fn initial_bytes_match_direct_summation() {
        let cfg = small();
        let m = PholdModel::new(cfg.clone()).unwrap();
        let (states, _) = init(&m);
        // rebuild every buffer size from the same streams, independently
        let mut expected = 0usize;
        for l in 0..cfg.num_lps {
            let mut rng = stream(cfg.seed, INIT_STATE ^ u64::from(l));
            for _ in 0..cfg.initial_buffers_per_lp {
                let size = rng.random_range(16..=64usize);
                let _fill: u8 = rng.random();
                expected += size;
            }
        }
        let total: usize = states.iter().map(PholdState::total_bytes).sum();
        assert_eq!(total, expected);
        let n = (cfg.num_lps * cfg.initial_buffers_per_lp) as usize;
        assert!(total >= n * 16 && total <= n * 64);
    }

    #[test]
    fn dealloc_frees_and_schedules_two() {
        let cfg = PholdConfig {
            initial_buffers_per_lp: 3,
            ..small()
        };
        let m = PholdModel::new(cfg).unwrap();
        let mut s = m.init_lp(LpId(1));
        let ev = event(1, 2.0, DEALLOC);
        let mut seq = 0;
        let mut out = Emitter::new(LpId(1), ev.recv_time, &mut seq);
        m.handle(&mut s, &ev, &mut out);
        let msgs = out.into_messages();
        assert_eq!(s.buffer_count(), 2);
        assert_eq!(msgs.len(), 2);
        let alloc = msgs.iter().find(|x| x.payload == [ALLOC]).unwrap();
        let again = msgs.iter().find(|x| x.payload == [DEALLOC]).unwrap();
        assert_ne!(alloc.dst, LpId(1));
        assert_eq!(again.dst, LpId(1));
        assert!(msgs.iter().all(|x| x.recv_time > ev.recv_time));
    }

    #[test]
    fn dealloc_on_empty_lp_only_reschedules() {
        let cfg = PholdConfig {
            initial_buffers_per_lp: 0,
            ..small()
        };
        let m = PholdModel::new(cfg).unwrap();
        let mut s = m.init_lp(LpId(0));
        let ev = event(0, 1.0, DEALLOC);
        let mut seq = 0;
        let mut out = Emitter::new(LpId(0), ev.recv_time, &mut seq);
        m.handle(&mut s, &ev, &mut out);
        let msgs = out.into_messages();
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].payload, vec![DEALLOC]);
    }

    #[test]
    fn alloc_adds_buffer_without_outputs() {
        let m = PholdModel::new(small()).unwrap();
        let mut s = m.init_lp(LpId(2));
        let ev = event(2, 3.0, ALLOC);
        let mut seq = 0;
        let mut out = Emitter::new(LpId(2), ev.recv_time, &mut seq);
        m.handle(&mut s, &ev, &mut out);
        assert_eq!(s.buffer_count(), 3);
        assert!(out.into_messages().is_empty());
    }

    #[test]
    fn handler_is_pure() {
        let m = PholdModel::new(small()).unwrap();
        let base = m.init_lp(LpId(3));
        let ev = event(3, 1.5, DEALLOC);
        let run = |mut s: PholdState| {
            let mut seq = 7;
            let mut out = Emitter::new(LpId(3), ev.recv_time, &mut seq);
            m.handle(&mut s, &ev, &mut out);
            (s, out.into_messages())
        };
        let a = run(base.clone());
        let b = run(base.clone());
        assert_eq!(a, b);
        // the clone handed to the first run was not written through
        assert_eq!(base, m.init_lp(LpId(3)));
    }

    #[test]
    fn segments_wrap_and_cover() {
        assert_eq!(sweep_segments(&[4, 4], 2, 4), vec![(0, 2, 4), (1, 0, 2)]);
        assert_eq!(sweep_segments(&[4, 4], 6, 4), vec![(1, 2, 4), (0, 0, 2)]);
        assert_eq!(sweep_segments(&[4, 0, 4], 3, 2), vec![(0, 3, 4), (2, 0, 1)]);
        assert_eq!(sweep_segments(&[3], 1, 10), vec![(0, 1, 3), (0, 0, 1)]);
        assert!(sweep_segments(&[], 0, 5).is_empty());
        assert!(sweep_segments(&[5], 0, 0).is_empty());
    }

    #[test]
    fn config_validation_and_toml() {
        assert!(PholdConfig::default().validate().is_ok());
        for bad in [
            PholdConfig { num_lps: 0, ..small() },
            PholdConfig { read_fraction: 1.5, ..small() },
            PholdConfig { write_fraction: -0.1, ..small() },
            PholdConfig { mean_delay: 0.0, ..small() },
            PholdConfig { buffer_size_range: ByteRange { min: 10, max: 5 }, ..small() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let cfg = PholdConfig::from_toml_str(
            "num_lps = 8\nread_fraction = 0.5\nbuffer_size_range = { min = 8, max = 8 }\n",
        )
        .unwrap();
        assert_eq!(cfg.num_lps, 8);
        assert_eq!(cfg.read_fraction, 0.5);
        assert_eq!(cfg.buffer_size_range, ByteRange { min: 8, max: 8 });
        assert_eq!(cfg.write_fraction, 0.1);
        assert!(PholdConfig::from_toml_str("num_lps = 0").is_err());
        assert!(PholdConfig::from_toml_str("bogus = 1").is_err());
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PholdConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
