//! Simulation and explicit-state model checking of a read/write consensus
//! algorithm that tolerates `k` crash failures, provided every crash happens
//! while at most `λ = n − k` processes have started participating.
//!
//! Each process deposits its input, collects the inputs until at most `k`
//! are missing, proposes the minimum to an [adopt-commit](adopt_commit)
//! object, and decides directly on a commit. On an adopt it waits for the
//! shared decision register while a helper thread competes for a one-shot
//! [mutex](arm_mutex) whose single winner writes the decision.
//!
//! * [`shared_memory`]: atomic registers and canonical hashing.
//! * [`consensus`]: the per-process state machine, one shared access per step.
//! * [`runtime`]: composition, crash adversary, random and replayed runs, traces.
//! * [`verdict`]: consensus and legality checks over a finished trace.
//! * [`explorer`]: exhaustive state-space search with bottom-SCC liveness.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod adopt_commit;
pub mod arm_mutex;
pub mod consensus;
pub mod error;
pub mod explorer;
pub mod runtime;
mod scc;
pub mod shared_memory;
pub mod verdict;

pub use error::{ConfigError, Fault};
pub use shared_memory::{RegisterFile, RegisterId, Value, Word};

/// Process identifier, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pid(pub usize);

impl Pid {
    /// Zero-based position.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// The shared-memory effect of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read(RegisterId, Word),
    Write(RegisterId, Word),
    /// Purely local transition.
    Local,
}

impl Access {
    pub fn register(&self) -> Option<RegisterId> {
        match *self {
            Access::Read(r, _) | Access::Write(r, _) => Some(r),
            Access::Local => None,
        }
    }

    pub fn is_shared(&self) -> bool {
        !matches!(self, Access::Local)
    }
}
