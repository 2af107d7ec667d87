//! One-shot acquire-restricted mutex: a tournament tree of two-process
//! Peterson locks with no release.
//!
//! Process `p` starts at leaf node `(p-1)/2`, side `(p-1)%2`. At each node it
//! raises its side's flag, yields `turn` to itself, and then spins reading the
//! peer flag and `turn` until the peer flag is `⊥` or `turn` names the other
//! side. The winner moves to node `m/2` of the next level on side `m%2`;
//! passing the root acquires. Missing contenders (when `n` is not a power of
//! two) leave their flags at `⊥`, so present contenders pass straight through.

use crate::error::Fault;
use crate::shared_memory::{arm_levels, RegisterFile, RegisterId, Value, Word};
use crate::{Access, Pid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArmPhase {
    WriteFlag,
    WriteTurn,
    ReadPeerFlag,
    ReadTurn,
    Acquired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArmCursor {
    pid: Pid,
    levels: usize,
    level: usize,
    phase: ArmPhase,
}

const FLAG_UP: Word = Word::Plain(Value::Int(1));

impl ArmCursor {
    pub fn new(pid: Pid, n: usize) -> Result<Self, Fault> {
        if pid.0 == 0 || pid.0 > n {
            return Err(Fault::UnknownPid(pid));
        }
        Ok(ArmCursor {
            pid,
            levels: arm_levels(n),
            level: 0,
            phase: ArmPhase::WriteFlag,
        })
    }

    pub fn pid(&self) -> Pid {
        self.pid
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Node index at the current level.
    pub fn node(&self) -> usize {
        self.pid.index() >> (self.level + 1)
    }

    /// Which of the node's two sides this contender occupies.
    pub fn side(&self) -> usize {
        (self.pid.index() >> self.level) & 1
    }

    pub fn phase(&self) -> ArmPhase {
        self.phase
    }

    pub fn acquired(&self) -> bool {
        self.phase == ArmPhase::Acquired
    }

    fn cell(&self, cell: usize) -> RegisterId {
        RegisterId::Arm {
            level: self.level,
            node: self.node(),
            cell,
        }
    }

    fn advance(&mut self) -> bool {
        self.level += 1;
        if self.level >= self.levels {
            self.phase = ArmPhase::Acquired;
            true
        } else {
            self.phase = ArmPhase::WriteFlag;
            false
        }
    }

    /// One register access of the protocol at the current node. Returns the
    /// access and whether the invoker has now acquired.
    pub fn step(&mut self, file: &mut RegisterFile) -> Result<(Access, bool), Fault> {
        if self.phase == ArmPhase::Acquired {
            return Err(Fault::SteppedDone("mutex cursor"));
        }
        if self.levels == 0 {
            self.phase = ArmPhase::Acquired;
            return Ok((Access::Local, true));
        }
        let side = self.side();
        match self.phase {
            ArmPhase::WriteFlag => {
                let r = self.cell(side);
                file.write(r, FLAG_UP, self.pid)?;
                self.phase = ArmPhase::WriteTurn;
                Ok((Access::Write(r, FLAG_UP), false))
            }
            ArmPhase::WriteTurn => {
                let r = self.cell(2);
                let w = Word::int(side as u64);
                file.write(r, w, self.pid)?;
                self.phase = ArmPhase::ReadPeerFlag;
                Ok((Access::Write(r, w), false))
            }
            ArmPhase::ReadPeerFlag => {
                let r = self.cell(1 - side);
                let w = file.read(r)?;
                let done = if w.is_bot() {
                    self.advance()
                } else {
                    self.phase = ArmPhase::ReadTurn;
                    false
                };
                Ok((Access::Read(r, w), done))
            }
            ArmPhase::ReadTurn => {
                let r = self.cell(2);
                let w = file.read(r)?;
                let done = if w != Word::int(side as u64) {
                    self.advance()
                } else {
                    self.phase = ArmPhase::ReadPeerFlag;
                    false
                };
                Ok((Access::Read(r, w), done))
            }
            ArmPhase::Acquired => unreachable!(),
        }
    }

    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        let phase = match self.phase {
            ArmPhase::WriteFlag => 0,
            ArmPhase::WriteTurn => 1,
            ArmPhase::ReadPeerFlag => 2,
            ArmPhase::ReadTurn => 3,
            ArmPhase::Acquired => 4,
        };
        out.push(((self.level as u8) << 3) | phase);
    }
}
