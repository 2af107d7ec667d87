use thiserror::Error;

use crate::shared_memory::RegisterId;
use crate::Pid;

/// A configuration value that violates its invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid configuration field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError {
            field,
            reason: reason.into(),
        }
    }
}

/// Programming errors: misuse of a cursor or register file. Never a run outcome.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Fault {
    #[error("unknown register {0}")]
    UnknownRegister(RegisterId),
    #[error("unknown process {0}")]
    UnknownPid(Pid),
    #[error("{writer} wrote {register}, which only {owner} may write")]
    SwmrViolation {
        register: RegisterId,
        writer: Pid,
        owner: Pid,
    },
    #[error("{0} stepped after it completed")]
    SteppedDone(&'static str),
    #[error("{pid} thread {thread} is not enabled")]
    ThreadDisabled { pid: Pid, thread: &'static str },
    #[error("contract violation: {0}")]
    Contract(&'static str),
}
