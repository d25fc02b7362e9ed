//! Shared-memory Time Warp with a wait-free GVT protocol and a
//! critical-section baseline.

pub mod error;
pub mod event;
pub mod gvt;
pub mod harness;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod phold;
pub mod queue;

pub use error::{ConfigError, KernelError};
pub use event::{EventKey, LpId, Message, MessageId, MessageKind, VirtualTime, WorkerId};
pub use kernel::{CoopScheduler, Engine, EngineConfig, GvtProtocol, RunOutcome, Trigger};
pub use model::{Emitter, Model};
pub use oracle::{run_sequential, OracleTrace};
pub use phold::{PholdConfig, PholdModel};
