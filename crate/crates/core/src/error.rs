use thiserror::Error;

use crate::event::{EventKey, LpId, VirtualTime};

/// Faults that halt a run. None of these are recoverable: each one means the
/// kernel or a GVT coordinator broke an invariant.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("protocol corruption at {lp}: {detail}")]
    ProtocolCorruption { lp: LpId, detail: String },

    #[error("{lp} has no snapshot preceding rollback target {target:?}")]
    MissingSnapshot { lp: LpId, target: EventKey },

    #[error("rollback of {lp} to {target} is below published GVT {gvt}")]
    RollbackBelowGvt {
        lp: LpId,
        target: VirtualTime,
        gvt: VirtualTime,
    },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("worker panicked: {0}")]
    WorkerPanic(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),

    #[error("cannot parse config file: {0}")]
    Parse(#[from] toml::de::Error),
}
