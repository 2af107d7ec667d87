//! Per-process state machine of the consensus algorithm.
//!
//! The main thread runs
//!
//! ```text
//! 1  INPUT[i] ← in
//! 2  repeat collect INPUT[1..n] until at most k entries are ⊥
//! 3  val ← min of the collect
//! 4  (tag, res) ← AC.propose(val)
//! 5  if tag = commit: DEC ← res; return DEC
//! 6  launch helper thread T
//! 7  wait DEC ≠ ⊥; kill T; return DEC
//! ```
//!
//! and the helper thread runs `ARM.acquire(); if DEC = ⊥ then DEC ← res`.
//! Every call to [`ProcState::step`] performs at most one shared access.

use serde::{Deserialize, Serialize};

use crate::adopt_commit::{AcCursor, Tag};
use crate::arm_mutex::ArmCursor;
use crate::error::Fault;
use crate::shared_memory::{encode_value, push_varint, RegisterFile, RegisterId, Value, Word};
use crate::{Access, Pid};

/// One of the two logical threads of a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Thread {
    #[serde(rename = "main")]
    Main,
    #[serde(rename = "T")]
    Helper,
}

impl Thread {
    pub fn name(self) -> &'static str {
        match self {
            Thread::Main => "main",
            Thread::Helper => "T",
        }
    }
}

/// Main-thread program counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MainPc {
    /// Line 1.
    WriteInput,
    /// Line 2: next `INPUT` index to read, 1-based.
    ReadInput(usize),
    /// Line 3.
    ComputeMin,
    /// Line 4.
    Propose(AcCursor),
    /// Line 5, the write.
    WriteDec,
    /// Line 5, `return(DEC)`.
    ReturnDec,
    /// Line 7.
    AwaitDec,
    Decided(u64),
}

/// Helper-thread program counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HelperPc {
    NotLaunched,
    Acquire(ArmCursor),
    ReadDec,
    WriteDec,
    Done,
    Killed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcState {
    pid: Pid,
    k: usize,
    input: u64,
    collected: Vec<Value>,
    val: Option<u64>,
    tag: Option<Tag>,
    res: Option<u64>,
    main: MainPc,
    helper: HelperPc,
}

/// What one step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub access: Access,
    /// Set on the step that returns from `propose`.
    pub decided: Option<u64>,
}

impl StepOutcome {
    fn access(access: Access) -> Self {
        StepOutcome { access, decided: None }
    }
}

fn dec_value(w: Word) -> Result<Value, Fault> {
    w.value().ok_or(Fault::Contract("DEC holds a stamped word"))
}

impl ProcState {
    pub fn new(pid: Pid, input: Value, n: usize, k: usize) -> Result<Self, Fault> {
        let Value::Int(input) = input else {
            return Err(Fault::Contract("bot cannot be proposed"));
        };
        if pid.0 == 0 || pid.0 > n {
            return Err(Fault::UnknownPid(pid));
        }
        Ok(ProcState {
            pid,
            k,
            input,
            collected: vec![Value::Bot; n],
            val: None,
            tag: None,
            res: None,
            main: MainPc::WriteInput,
            helper: HelperPc::NotLaunched,
        })
    }

    pub fn pid(&self) -> Pid {
        self.pid
    }

    pub fn input(&self) -> u64 {
        self.input
    }

    pub fn collected(&self) -> &[Value] {
        &self.collected
    }

    pub fn val(&self) -> Option<u64> {
        self.val
    }

    pub fn tag(&self) -> Option<Tag> {
        self.tag
    }

    pub fn res(&self) -> Option<u64> {
        self.res
    }

    pub fn main_pc(&self) -> MainPc {
        self.main
    }

    pub fn helper_pc(&self) -> HelperPc {
        self.helper
    }

    pub fn decision(&self) -> Option<u64> {
        match self.main {
            MainPc::Decided(v) => Some(v),
            _ => None,
        }
    }

    /// Whether line 6 has run.
    pub fn helper_launched(&self) -> bool {
        self.helper != HelperPc::NotLaunched
    }

    pub fn is_enabled(&self, thread: Thread) -> bool {
        match thread {
            Thread::Main => !matches!(self.main, MainPc::Decided(_)),
            Thread::Helper => matches!(
                self.helper,
                HelperPc::Acquire(_) | HelperPc::ReadDec | HelperPc::WriteDec
            ),
        }
    }

    /// Enabled threads, `Main` first.
    pub fn enabled_threads(&self) -> impl Iterator<Item = Thread> + '_ {
        [Thread::Main, Thread::Helper]
            .into_iter()
            .filter(|&t| self.is_enabled(t))
    }

    /// Pending `DEC` write, if the next step of either thread is one.
    pub fn pending_dec_write(&self) -> impl Iterator<Item = u64> + '_ {
        let main = (self.main == MainPc::WriteDec).then_some(self.res);
        let helper = (self.helper == HelperPc::WriteDec).then_some(self.res);
        main.into_iter().chain(helper).flatten()
    }

    pub fn step(&mut self, thread: Thread, file: &mut RegisterFile) -> Result<StepOutcome, Fault> {
        if !self.is_enabled(thread) {
            return Err(Fault::ThreadDisabled {
                pid: self.pid,
                thread: thread.name(),
            });
        }
        match thread {
            Thread::Main => self.step_main(file),
            Thread::Helper => self.step_helper(file),
        }
    }

    fn res_word(&self) -> Result<Word, Fault> {
        self.res
            .map(Word::int)
            .ok_or(Fault::Contract("res read before adopt-commit returned"))
    }

    fn step_main(&mut self, file: &mut RegisterFile) -> Result<StepOutcome, Fault> {
        let n = self.collected.len();
        match self.main {
            MainPc::WriteInput => {
                let r = RegisterId::Input(self.pid.0);
                let w = Word::int(self.input);
                file.write(r, w, self.pid)?;
                self.main = MainPc::ReadInput(1);
                Ok(StepOutcome::access(Access::Write(r, w)))
            }
            MainPc::ReadInput(j) => {
                let r = RegisterId::Input(j);
                let w = file.read(r)?;
                self.collected[j - 1] = w.value().ok_or(Fault::Contract("INPUT holds a stamped word"))?;
                self.main = if j < n {
                    MainPc::ReadInput(j + 1)
                } else if self.collected.iter().filter(|v| v.is_bot()).count() <= self.k {
                    MainPc::ComputeMin
                } else {
                    self.collected.fill(Value::Bot);
                    MainPc::ReadInput(1)
                };
                Ok(StepOutcome::access(Access::Read(r, w)))
            }
            MainPc::ComputeMin => {
                let min = self.collected.iter().copied().min().unwrap_or(Value::Bot);
                let Value::Int(v) = min else {
                    return Err(Fault::Contract("collect exited with no deposited value"));
                };
                self.val = Some(v);
                self.main = MainPc::Propose(AcCursor::new(self.pid, min)?);
                Ok(StepOutcome::access(Access::Local))
            }
            MainPc::Propose(mut ac) => {
                let (access, result) = ac.step(file)?;
                self.main = MainPc::Propose(ac);
                if let Some((tag, v)) = result {
                    self.tag = Some(tag);
                    self.res = Some(v);
                    self.main = match tag {
                        Tag::Commit => MainPc::WriteDec,
                        Tag::Adopt => {
                            self.helper = HelperPc::Acquire(ArmCursor::new(self.pid, n)?);
                            MainPc::AwaitDec
                        }
                    };
                }
                Ok(StepOutcome::access(access))
            }
            MainPc::WriteDec => {
                let w = self.res_word()?;
                file.write(RegisterId::Dec, w, self.pid)?;
                self.main = MainPc::ReturnDec;
                Ok(StepOutcome::access(Access::Write(RegisterId::Dec, w)))
            }
            MainPc::ReturnDec => {
                let w = file.read(RegisterId::Dec)?;
                let Value::Int(d) = dec_value(w)? else {
                    return Err(Fault::Contract("DEC is bot right after it was written"));
                };
                self.main = MainPc::Decided(d);
                Ok(StepOutcome {
                    access: Access::Read(RegisterId::Dec, w),
                    decided: Some(d),
                })
            }
            MainPc::AwaitDec => {
                let w = file.read(RegisterId::Dec)?;
                let access = Access::Read(RegisterId::Dec, w);
                match dec_value(w)? {
                    Value::Bot => Ok(StepOutcome::access(access)),
                    Value::Int(d) => {
                        self.helper = HelperPc::Killed;
                        self.main = MainPc::Decided(d);
                        Ok(StepOutcome { access, decided: Some(d) })
                    }
                }
            }
            MainPc::Decided(_) => unreachable!("disabled thread"),
        }
    }

    fn step_helper(&mut self, file: &mut RegisterFile) -> Result<StepOutcome, Fault> {
        match self.helper {
            HelperPc::Acquire(mut arm) => {
                let (access, acquired) = arm.step(file)?;
                self.helper = if acquired { HelperPc::ReadDec } else { HelperPc::Acquire(arm) };
                Ok(StepOutcome::access(access))
            }
            HelperPc::ReadDec => {
                let w = file.read(RegisterId::Dec)?;
                self.helper = if dec_value(w)?.is_bot() { HelperPc::WriteDec } else { HelperPc::Done };
                Ok(StepOutcome::access(Access::Read(RegisterId::Dec, w)))
            }
            HelperPc::WriteDec => {
                let w = self.res_word()?;
                file.write(RegisterId::Dec, w, self.pid)?;
                self.helper = HelperPc::Done;
                Ok(StepOutcome::access(Access::Write(RegisterId::Dec, w)))
            }
            HelperPc::NotLaunched | HelperPc::Done | HelperPc::Killed => unreachable!("disabled thread"),
        }
    }

    /// Canonical encoding of everything that can influence future behavior.
    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        match self.main {
            MainPc::WriteInput => out.push(0),
            MainPc::ReadInput(j) => {
                out.extend([1, j as u8]);
                for &v in &self.collected[..j - 1] {
                    encode_value(v, out);
                }
            }
            MainPc::ComputeMin => {
                out.push(2);
                for &v in &self.collected {
                    encode_value(v, out);
                }
            }
            MainPc::Propose(ac) => {
                out.push(3);
                push_varint(out, 0, ac.proposal());
                ac.encode(out);
            }
            MainPc::WriteDec => {
                out.push(4);
                push_varint(out, 0, self.res.unwrap_or(0));
            }
            MainPc::ReturnDec => out.push(5),
            MainPc::AwaitDec => {
                out.push(6);
                push_varint(out, 0, self.res.unwrap_or(0));
            }
            MainPc::Decided(v) => {
                out.push(7);
                push_varint(out, 0, v);
            }
        }
        match self.helper {
            HelperPc::NotLaunched => out.push(0),
            HelperPc::Acquire(arm) => {
                out.push(1);
                arm.encode(out);
            }
            HelperPc::ReadDec => out.push(2),
            HelperPc::WriteDec => out.push(3),
            HelperPc::Done => out.push(4),
            HelperPc::Killed => out.push(5),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adopt_commit::ac_step_bound;

    fn run_main_to_decision(p: &mut ProcState, f: &mut RegisterFile) -> (u64, Vec<Access>) {
        let mut log = Vec::new();
        for _ in 0..1000 {
            let out = p.step(Thread::Main, f).unwrap();
            log.push(out.access);
            if let Some(d) = out.decided {
                return (d, log);
            }
        }
        panic!("no decision");
    }

    #[test]
    fn init() {
        let p = ProcState::new(Pid(1), Value::Int(7), 3, 1).unwrap();
        assert_eq!(p.main_pc(), MainPc::WriteInput);
        assert_eq!(p.helper_pc(), HelperPc::NotLaunched);
        assert!(p.collected().iter().all(|v| v.is_bot()));
        let p = ProcState::new(Pid(2), Value::Int(0), 2, 2).unwrap();
        assert_eq!(p.main_pc(), MainPc::WriteInput);
        assert!(ProcState::new(Pid(1), Value::Bot, 2, 0).is_err());
    }

    #[test]
    fn enabled_threads_by_phase() {
        let mut p = ProcState::new(Pid(1), Value::Int(1), 2, 0).unwrap();
        assert_eq!(p.enabled_threads().collect::<Vec<_>>(), [Thread::Main]);
        p.main = MainPc::AwaitDec;
        p.helper = HelperPc::Acquire(ArmCursor::new(Pid(1), 2).unwrap());
        assert_eq!(p.enabled_threads().collect::<Vec<_>>(), [Thread::Main, Thread::Helper]);
        p.main = MainPc::Decided(1);
        p.helper = HelperPc::Killed;
        assert_eq!(p.enabled_threads().count(), 0);
        let mut f = RegisterFile::new(2, 0).unwrap();
        assert!(matches!(p.step(Thread::Main, &mut f), Err(Fault::ThreadDisabled { .. })));
    }

    #[test]
    fn solo_run_step_count() {
        let mut f = RegisterFile::new(1, 0).unwrap();
        let mut p = ProcState::new(Pid(1), Value::Int(7), 1, 0).unwrap();
        let (d, log) = run_main_to_decision(&mut p, &mut f);
        assert_eq!(d, 7);
        // line 1, one collect of n = 1, line 3, the adopt-commit, DEC write and read.
        assert_eq!(log.len(), 1 + 1 + 1 + ac_step_bound(1) + 2);
        assert_eq!(p.tag(), Some(Tag::Commit));
        assert!(log.iter().filter(|a| !a.is_shared()).count() == 1);
    }

    #[test]
    fn partner_crashed_before_starting() {
        let mut f = RegisterFile::new(2, 1).unwrap();
        let mut p = ProcState::new(Pid(1), Value::Int(3), 2, 1).unwrap();
        let (d, _) = run_main_to_decision(&mut p, &mut f);
        assert_eq!(d, 3);
        assert_eq!(p.collected(), [Value::Int(3), Value::Bot]);
    }

    #[test]
    fn collect_restarts_until_enough_inputs() {
        let mut f = RegisterFile::new(2, 0).unwrap();
        let mut p = ProcState::new(Pid(1), Value::Int(3), 2, 0).unwrap();
        for _ in 0..3 {
            p.step(Thread::Main, &mut f).unwrap();
        }
        assert_eq!(p.main_pc(), MainPc::ReadInput(1));
        assert!(p.collected().iter().all(|v| v.is_bot()));
        f.write(RegisterId::Input(2), Word::int(9), Pid(2)).unwrap();
        p.step(Thread::Main, &mut f).unwrap();
        p.step(Thread::Main, &mut f).unwrap();
        assert_eq!(p.main_pc(), MainPc::ComputeMin);
        p.step(Thread::Main, &mut f).unwrap();
        assert_eq!(p.val(), Some(3));
    }

    #[test]
    fn adopt_launches_helper_which_writes_dec() {
        let mut f = RegisterFile::new(2, 1).unwrap();
        // p2 went through adopt-commit alone with 1 but its INPUT write is not visible.
        let mut other = AcCursor::new(Pid(2), Value::Int(1)).unwrap();
        while other.step(&mut f).unwrap().1.is_none() {}
        let mut p = ProcState::new(Pid(1), Value::Int(0), 2, 1).unwrap();
        while p.main_pc() != MainPc::AwaitDec {
            p.step(Thread::Main, &mut f).unwrap();
        }
        assert_eq!((p.val(), p.tag(), p.res()), (Some(0), Some(Tag::Adopt), Some(1)));
        assert!(p.helper_launched());
        assert_eq!(p.step(Thread::Main, &mut f).unwrap().decided, None);
        while p.helper_pc() != HelperPc::Done {
            p.step(Thread::Helper, &mut f).unwrap();
        }
        assert_eq!(f.read(RegisterId::Dec).unwrap(), Word::int(1));
        let out = p.step(Thread::Main, &mut f).unwrap();
        assert_eq!(out.decided, Some(1));
        assert_eq!(p.helper_pc(), HelperPc::Killed);
    }
}
