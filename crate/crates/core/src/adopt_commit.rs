//! One-shot wait-free adopt-commit object over SWMR registers.
//!
//! Two-phase construction on arrays `A[1..n]` and `B[1..n]`:
//!
//! 1. write `A[i] ← v`, then collect `A`. If every non-`⊥` entry equals `v`
//!    the invoker is a *single* candidate, otherwise *multi*.
//! 2. write `B[i] ← (single|multi, v)`, then collect `B`. If every non-`⊥`
//!    entry is `(single, v)` return `(commit, v)`; else if some entry is
//!    `(single, w)` return `(adopt, w)` for the lowest such index; else
//!    return `(adopt, v)`.
//!
//! Two processes proposing different values cannot both be single candidates:
//! whichever wrote `A` later sees the other's entry during its collect.
//!
//! The cursor performs one register access per [`AcCursor::step`]; the final
//! decision is evaluated in the same step as the read of `B[n]`.

use serde::Serialize;

use crate::error::Fault;
use crate::shared_memory::{Marker, RegisterFile, RegisterId, Value, Word};
use crate::{Access, Pid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Commit,
    Adopt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcPhase {
    WriteA,
    /// Next index to read, 1-based.
    CollectA(usize),
    WriteB,
    CollectB(usize),
    Done(Tag, u64),
}

/// Per-process progress through one `ac_propose` invocation.
///
/// Collects are folded as they go: `conflict` records whether `A` held a
/// value other than the proposal, `b_unanimous` whether every `B` entry seen
/// so far is `(single, proposal)`, and `b_single` the first single-candidate
/// value seen in `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AcCursor {
    pid: Pid,
    proposal: u64,
    phase: AcPhase,
    conflict: bool,
    b_unanimous: bool,
    b_single: Option<u64>,
}

/// Steps one invocation takes: two writes and two `n`-read collects.
pub fn ac_step_bound(n: usize) -> usize {
    2 * n + 2
}

impl AcCursor {
    pub fn new(pid: Pid, proposal: Value) -> Result<Self, Fault> {
        let Value::Int(proposal) = proposal else {
            return Err(Fault::Contract("adopt-commit proposal must not be bot"));
        };
        Ok(AcCursor {
            pid,
            proposal,
            phase: AcPhase::WriteA,
            conflict: false,
            b_unanimous: true,
            b_single: None,
        })
    }

    pub fn pid(&self) -> Pid {
        self.pid
    }

    pub fn proposal(&self) -> u64 {
        self.proposal
    }

    pub fn phase(&self) -> AcPhase {
        self.phase
    }

    pub fn result(&self) -> Option<(Tag, u64)> {
        match self.phase {
            AcPhase::Done(tag, v) => Some((tag, v)),
            _ => None,
        }
    }

    /// Performs one register access. Returns the access and, on the final
    /// step only, the decided pair.
    pub fn step(&mut self, file: &mut RegisterFile) -> Result<(Access, Option<(Tag, u64)>), Fault> {
        let n = file.n();
        let i = self.pid.0;
        match self.phase {
            AcPhase::WriteA => {
                let w = Word::int(self.proposal);
                file.write(RegisterId::AcA(i), w, self.pid)?;
                self.phase = AcPhase::CollectA(1);
                Ok((Access::Write(RegisterId::AcA(i), w), None))
            }
            AcPhase::CollectA(j) => {
                let w = file.read(RegisterId::AcA(j))?;
                if !w.is_bot() && w != Word::int(self.proposal) {
                    self.conflict = true;
                }
                self.phase = if j < n { AcPhase::CollectA(j + 1) } else { AcPhase::WriteB };
                Ok((Access::Read(RegisterId::AcA(j), w), None))
            }
            AcPhase::WriteB => {
                let marker = if self.conflict { Marker::Multi } else { Marker::Single };
                let w = Word::Stamped { marker, value: self.proposal };
                file.write(RegisterId::AcB(i), w, self.pid)?;
                self.phase = AcPhase::CollectB(1);
                Ok((Access::Write(RegisterId::AcB(i), w), None))
            }
            AcPhase::CollectB(j) => {
                let w = file.read(RegisterId::AcB(j))?;
                match w {
                    Word::Stamped { marker: Marker::Single, value } => {
                        if value != self.proposal {
                            self.b_unanimous = false;
                        }
                        self.b_single.get_or_insert(value);
                    }
                    Word::Stamped { marker: Marker::Multi, .. } => self.b_unanimous = false,
                    Word::Plain(Value::Bot) => {}
                    Word::Plain(Value::Int(_)) => return Err(Fault::Contract("AC.B holds an unstamped value")),
                }
                if j < n {
                    self.phase = AcPhase::CollectB(j + 1);
                    return Ok((Access::Read(RegisterId::AcB(j), w), None));
                }
                let decided = if self.b_unanimous {
                    (Tag::Commit, self.proposal)
                } else {
                    (Tag::Adopt, self.b_single.unwrap_or(self.proposal))
                };
                self.phase = AcPhase::Done(decided.0, decided.1);
                Ok((Access::Read(RegisterId::AcB(j), w), Some(decided)))
            }
            AcPhase::Done(..) => Err(Fault::SteppedDone("adopt-commit cursor")),
        }
    }

    /// Canonical byte encoding for state-space keys.
    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        use crate::shared_memory::push_varint;
        match self.phase {
            AcPhase::WriteA => out.push(0),
            AcPhase::CollectA(j) => out.extend([1, j as u8, self.conflict as u8]),
            AcPhase::WriteB => out.extend([2, self.conflict as u8]),
            AcPhase::CollectB(j) => {
                out.extend([3, j as u8, self.b_unanimous as u8]);
                match self.b_single {
                    Some(v) => push_varint(out, 1, v),
                    None => out.push(0),
                }
            }
            AcPhase::Done(tag, v) => {
                out.push(4 + (tag == Tag::Adopt) as u8);
                push_varint(out, 1, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_solo(n: usize, pid: usize, v: u64, file: &mut RegisterFile) -> ((Tag, u64), usize) {
        let mut c = AcCursor::new(Pid(pid), Value::Int(v)).unwrap();
        let mut steps = 0;
        loop {
            steps += 1;
            let (_, r) = c.step(file).unwrap();
            if let Some(r) = r {
                assert!(steps <= ac_step_bound(n));
                return (r, steps);
            }
        }
    }

    #[test]
    fn init_positions_cursor() {
        let c = AcCursor::new(Pid(1), Value::Int(5)).unwrap();
        assert_eq!((c.pid(), c.phase(), c.proposal()), (Pid(1), AcPhase::WriteA, 5));
        let c = AcCursor::new(Pid(2), Value::Int(0)).unwrap();
        assert_eq!((c.pid(), c.phase(), c.proposal()), (Pid(2), AcPhase::WriteA, 0));
        assert!(AcCursor::new(Pid(1), Value::Bot).is_err());
    }

    #[test]
    fn solo_commits_own_value() {
        let mut f = RegisterFile::new(3, 1).unwrap();
        assert_eq!(run_solo(3, 1, 5, &mut f), ((Tag::Commit, 5), 8));
    }

    #[test]
    fn step_bound_matches_solo_runs() {
        assert_eq!(ac_step_bound(1), 4);
        assert_eq!(ac_step_bound(3), 8);
        assert_eq!(ac_step_bound(9), 20);
        for n in 1..=9 {
            let mut f = RegisterFile::new(n, 0).unwrap();
            assert_eq!(run_solo(n, n, 0, &mut f).1, ac_step_bound(n));
        }
    }

    #[test]
    fn later_invoker_adopts_earlier_commit() {
        let mut f = RegisterFile::new(2, 0).unwrap();
        assert_eq!(run_solo(2, 1, 0, &mut f).0, (Tag::Commit, 0));
        assert_eq!(run_solo(2, 2, 1, &mut f).0, (Tag::Adopt, 0));
    }

    #[test]
    fn done_cursor_faults() {
        let mut f = RegisterFile::new(1, 0).unwrap();
        let mut c = AcCursor::new(Pid(1), Value::Int(2)).unwrap();
        while c.step(&mut f).unwrap().1.is_none() {}
        assert_eq!(c.result(), Some((Tag::Commit, 2)));
        assert!(matches!(c.step(&mut f), Err(Fault::SteppedDone(_))));
    }

    #[test]
    fn collect_reads_each_index_once_in_order() {
        let n = 3;
        let mut f = RegisterFile::new(n, 0).unwrap();
        let mut c = AcCursor::new(Pid(2), Value::Int(1)).unwrap();
        let mut regs = Vec::new();
        loop {
            let (acc, r) = c.step(&mut f).unwrap();
            regs.push(acc.register().unwrap().to_string());
            if r.is_some() {
                break;
            }
        }
        assert_eq!(
            regs,
            ["AC.A[2]", "AC.A[1]", "AC.A[2]", "AC.A[3]", "AC.B[2]", "AC.B[1]", "AC.B[2]", "AC.B[3]"]
        );
    }
}
