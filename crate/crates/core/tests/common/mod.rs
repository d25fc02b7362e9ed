#![allow(dead_code)]

pub mod scenarios;

use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use timewarp::kernel::{CoopScheduler, Engine, EngineConfig, GvtProtocol, Trigger};
use timewarp::phold::{ByteRange, PholdConfig, PholdModel};
use timewarp::{Emitter, LpId, Message, Model, VirtualTime};

/// A model whose events carry their own outputs: each payload is a list of
/// `(destination, delay)` pairs, and the messages it schedules carry none.
pub struct Script {
    pub lps: u32,
    /// `(lp, time, outputs)` initial events.
    pub initial: Vec<(u32, f64, Vec<(u32, f64)>)>,
}

fn encode(outs: &[(u32, f64)]) -> Vec<u8> {
    outs.iter()
        .flat_map(|(d, t)| d.to_le_bytes().into_iter().chain(t.to_le_bytes()))
        .collect()
}

fn decode(p: &[u8]) -> Vec<(u32, f64)> {
    p.chunks_exact(12)
        .map(|c| {
            (
                u32::from_le_bytes(c[..4].try_into().unwrap()),
                f64::from_le_bytes(c[4..].try_into().unwrap()),
            )
        })
        .collect()
}

impl Model for Script {
    type State = u64;

    fn num_lps(&self) -> u32 {
        self.lps
    }

    fn init_lp(&self, _lp: LpId) -> u64 {
        0
    }

    fn initial_events(&self, lp: LpId, _s: &u64, out: &mut Emitter) {
        for (l, t, outs) in &self.initial {
            if *l == lp.0 {
                out.schedule(lp, VirtualTime::new(*t), encode(outs));
            }
        }
    }

    fn handle(&self, s: &mut u64, ev: &Message, out: &mut Emitter) {
        *s = s.rotate_left(7) ^ ev.recv_time.as_f64().to_bits() ^ ev.id.seq;
        for (dst, delay) in decode(&ev.payload) {
            out.schedule(LpId(dst), VirtualTime::new(out.now().as_f64() + delay), Vec::new());
        }
    }

    fn checksum(&self, s: &u64) -> u64 {
        *s
    }
}

/// PHOLD with tiny buffers, so events are cheap.
pub fn small_phold(num_lps: u32, seed: u64, t_end: f64) -> PholdConfig {
    PholdConfig {
        num_lps,
        initial_buffers_per_lp: 4,
        buffer_size_range: ByteRange { min: 16, max: 256 },
        t_end,
        seed,
        ..PholdConfig::default()
    }
}

pub fn random_small_phold(rng: &mut impl Rng, max_lps: u32, t_end: f64) -> PholdConfig {
    PholdConfig {
        num_lps: rng.random_range(2..=max_lps),
        initial_buffers_per_lp: rng.random_range(1..=6),
        mean_delay: rng.random_range(0.5..2.0),
        memory_weighted: rng.random_bool(0.3),
        ..small_phold(1, rng.random(), t_end)
    }
}

pub fn engine_config(protocol: GvtProtocol, workers: usize, trigger: Trigger, t_end: f64) -> EngineConfig {
    EngineConfig {
        workers,
        protocol,
        trigger,
        t_end: VirtualTime::new(t_end),
        record_commits: true,
        audit: true,
        ..EngineConfig::default()
    }
}

pub fn phold_engine(cfg: &PholdConfig, ecfg: EngineConfig) -> Engine<PholdModel> {
    Engine::new(Arc::new(PholdModel::new(cfg.clone()).unwrap()), ecfg)
}

pub fn coop<M: Model>(model: M, ecfg: EngineConfig, seed: u64) -> CoopScheduler<M> {
    Engine::new(Arc::new(model), ecfg).into_scheduler(seed)
}

pub const TEN_MS: Trigger = Trigger::Interval(Duration::from_millis(10));

pub const PROTOCOLS: [GvtProtocol; 2] = [GvtProtocol::WaitFree, GvtProtocol::Fh];

/// Runs a single-LP PHOLD to `t_end` straight through and again with forced
/// rollbacks part-way, returning both final checksums and the number of
/// events the rollbacks undid.
pub fn replay_with_rollbacks(cfg: &PholdConfig, checkpoint_interval: u32, rng: &mut impl Rng) -> (u64, u64, usize) {
    use timewarp::kernel::LpState;
    assert_eq!(cfg.num_lps, 1);
    let model = PholdModel::new(cfg.clone()).unwrap();
    let horizon = cfg.t_end();

    let run = |lp: &mut LpState<_>, stop_after: Option<usize>| {
        let mut n = 0;
        while stop_after.is_none_or(|s| n < s) {
            let Some((_, out)) = lp.execute_next(&model, horizon) else {
                break;
            };
            lp.incorporate(out).unwrap();
            n += 1;
        }
    };

    let (mut straight, init) = LpState::new(&model, LpId(0), checkpoint_interval);
    straight.incorporate(init).unwrap();
    run(&mut straight, None);

    let (mut lp, init) = LpState::new(&model, LpId(0), checkpoint_interval);
    lp.incorporate(init).unwrap();
    let mut undone = 0;
    for _ in 0..rng.random_range(1..=3) {
        run(&mut lp, Some(rng.random_range(5..60)));
        let to = VirtualTime::new(lp.clock().as_f64() * rng.random_range(0.0..1.0));
        let r = lp.rollback_to_time(&model, to).unwrap();
        undone += r.undone;
        lp.incorporate(r.anti_messages).unwrap();
        assert!(lp.pending_rollback().is_none());
    }
    run(&mut lp, None);
    assert_eq!(
        lp.queue().processed().map(|m| m.id).collect::<Vec<_>>(),
        straight.queue().processed().map(|m| m.id).collect::<Vec<_>>()
    );
    (model.checksum(straight.state()), model.checksum(lp.state()), undone)
}
