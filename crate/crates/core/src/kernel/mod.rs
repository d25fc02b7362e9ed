//! The Time Warp kernel: per-LP optimistic state, workers and run drivers.

mod engine;
mod lp;
mod shared;
mod worker;

pub use engine::{CoopScheduler, Engine, EngineConfig, RunOutcome, Sweep};
pub use lp::{LpState, ReclaimReport, RollbackReport};
pub use shared::{GvtProtocol, Hook, HookEvent, Progress, Shared};
pub use worker::{IterationReport, Trigger, Worker, WorkerStats};
