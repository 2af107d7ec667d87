//! Exhaustive checks of the two shared objects in isolation, crash-free.

use serde::Serialize;

use super::{explore_model, ExplorationReport, Model, Property};
use crate::adopt_commit::{ac_step_bound, AcCursor, AcPhase, Tag};
use crate::arm_mutex::ArmCursor;
use crate::error::{ConfigError, Fault};
use crate::shared_memory::{RegisterFile, Value};
use crate::Pid;

/// One register access by the cursor of `pid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ObjectStep {
    pub pid: Pid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObjectUnderTest {
    /// Every process `i` proposes `proposals[i - 1]`.
    AdoptCommit { proposals: Vec<u64> },
    /// `invokers` acquire concurrently on an `n`-process mutex.
    Arm { n: usize, invokers: Vec<Pid> },
}

#[derive(Clone)]
pub struct AcState {
    file: RegisterFile,
    cursors: Vec<AcCursor>,
}

pub struct AcModel {
    proposals: Vec<u64>,
}

impl AcModel {
    pub fn new(proposals: Vec<u64>) -> Result<Self, ConfigError> {
        if proposals.is_empty() {
            return Err(ConfigError::new("proposals", "at least one proposal is required"));
        }
        Ok(AcModel { proposals })
    }

    fn steps_taken(&self, c: &AcCursor) -> usize {
        let n = self.proposals.len();
        match c.phase() {
            AcPhase::WriteA => 0,
            AcPhase::CollectA(j) => j,
            AcPhase::WriteB => n + 1,
            AcPhase::CollectB(j) => n + 1 + j,
            AcPhase::Done(..) => ac_step_bound(n),
        }
    }
}

impl Model for AcModel {
    type State = AcState;
    type Action = ObjectStep;

    fn initial(&self) -> AcState {
        let n = self.proposals.len();
        AcState {
            file: RegisterFile::new(n, 0).expect("n >= 1"),
            cursors: (1..=n)
                .map(|p| AcCursor::new(Pid(p), Value::Int(self.proposals[p - 1])).expect("integer proposal"))
                .collect(),
        }
    }

    fn actions(&self, s: &AcState, out: &mut Vec<ObjectStep>) {
        out.extend(s.cursors.iter().filter(|c| c.result().is_none()).map(|c| ObjectStep { pid: c.pid() }));
    }

    fn apply(&self, s: &mut AcState, a: ObjectStep) -> Result<(), Fault> {
        let c = s.cursors.get_mut(a.pid.index()).ok_or(Fault::UnknownPid(a.pid))?;
        c.step(&mut s.file).map(drop)
    }

    fn encode(&self, s: &AcState, out: &mut Vec<u8>) {
        s.file.encode(out);
        for c in &s.cursors {
            c.encode(out);
        }
    }

    fn check(&self, s: &AcState, out: &mut Vec<(Property, String)>) {
        let bound = ac_step_bound(self.proposals.len());
        let unanimous = self.proposals.iter().all(|&v| v == self.proposals[0]);
        let committed = s.cursors.iter().find_map(|c| match c.result() {
            Some((Tag::Commit, v)) => Some((c.pid(), v)),
            _ => None,
        });
        for c in &s.cursors {
            if self.steps_taken(c) > bound {
                out.push((Property::AcTermination, format!("{} exceeded {bound} steps", c.pid())));
            }
            let Some((tag, v)) = c.result() else { continue };
            if !self.proposals.contains(&v) {
                out.push((Property::AcValidity, format!("{} returned unproposed {v}", c.pid())));
            }
            if unanimous && (tag, v) != (Tag::Commit, self.proposals[0]) {
                out.push((
                    Property::AcObligation,
                    format!("{} returned ({tag:?}, {v}) on unanimous input", c.pid()),
                ));
            }
            if let Some((p, w)) = committed {
                if v != w {
                    out.push((
                        Property::AcWeakAgreement,
                        format!("{p} committed {w} but {} returned ({tag:?}, {v})", c.pid()),
                    ));
                }
            }
        }
    }

    fn is_goal(&self, s: &AcState) -> bool {
        s.cursors.iter().all(|c| c.result().is_some())
    }

    fn pending_process(&self, s: &AcState) -> Option<Pid> {
        s.cursors.iter().find(|c| c.result().is_none()).map(|c| c.pid())
    }
}

#[derive(Clone)]
pub struct ArmState {
    file: RegisterFile,
    cursors: Vec<ArmCursor>,
}

pub struct ArmModel {
    n: usize,
    invokers: Vec<Pid>,
}

impl ArmModel {
    pub fn new(n: usize, invokers: Vec<Pid>) -> Result<Self, ConfigError> {
        if n == 0 {
            return Err(ConfigError::new("n", "must be at least 1"));
        }
        if invokers.is_empty() {
            return Err(ConfigError::new("invokers", "at least one invoker is required"));
        }
        let mut sorted = invokers.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != invokers.len() || sorted.iter().any(|p| p.0 == 0 || p.0 > n) {
            return Err(ConfigError::new("invokers", format!("must be distinct pids in 1..={n}")));
        }
        Ok(ArmModel { n, invokers })
    }
}

impl Model for ArmModel {
    type State = ArmState;
    type Action = ObjectStep;

    fn initial(&self) -> ArmState {
        ArmState {
            file: RegisterFile::new(self.n, 0).expect("n >= 1"),
            cursors: self
                .invokers
                .iter()
                .map(|&p| ArmCursor::new(p, self.n).expect("validated pid"))
                .collect(),
        }
    }

    fn actions(&self, s: &ArmState, out: &mut Vec<ObjectStep>) {
        out.extend(s.cursors.iter().filter(|c| !c.acquired()).map(|c| ObjectStep { pid: c.pid() }));
    }

    fn apply(&self, s: &mut ArmState, a: ObjectStep) -> Result<(), Fault> {
        let c = s
            .cursors
            .iter_mut()
            .find(|c| c.pid() == a.pid)
            .ok_or(Fault::UnknownPid(a.pid))?;
        c.step(&mut s.file).map(drop)
    }

    fn encode(&self, s: &ArmState, out: &mut Vec<u8>) {
        s.file.encode(out);
        for c in &s.cursors {
            c.encode(out);
        }
    }

    fn check(&self, s: &ArmState, out: &mut Vec<(Property, String)>) {
        let winners: Vec<Pid> = s.cursors.iter().filter(|c| c.acquired()).map(|c| c.pid()).collect();
        if winners.len() > 1 {
            out.push((Property::MutualExclusion, format!("{winners:?} all acquired")));
        }
    }

    fn is_goal(&self, s: &ArmState) -> bool {
        s.cursors.iter().any(|c| c.acquired())
    }

    fn pending_process(&self, s: &ArmState) -> Option<Pid> {
        s.cursors.iter().find(|c| !c.acquired()).map(|c| c.pid())
    }
}

/// Explores every interleaving of the object's invocations.
///
/// Adopt-commit passes when every invocation returns within its step bound
/// with validity, obligation and weak agreement intact. The mutex passes when
/// at most one invoker ever acquires and every bottom SCC has a winner.
pub fn explore_object(obj: &ObjectUnderTest, state_cap: usize) -> Result<ExplorationReport<ObjectStep>, ConfigError> {
    let fault = |f: Fault| ConfigError::new("object", f.to_string());
    match obj {
        ObjectUnderTest::AdoptCommit { proposals } => {
            explore_model(&AcModel::new(proposals.clone())?, state_cap).map_err(fault)
        }
        ObjectUnderTest::Arm { n, invokers } => {
            explore_model(&ArmModel::new(*n, invokers.clone())?, state_cap).map_err(fault)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explorer::Liveness;

    #[test]
    fn unanimous_adopt_commit_commits() {
        let r = explore_object(&ObjectUnderTest::AdoptCommit { proposals: vec![4, 4] }, 10_000).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.terminal_states >= 1);
    }

    #[test]
    fn mixed_adopt_commit() {
        let r = explore_object(&ObjectUnderTest::AdoptCommit { proposals: vec![0, 1] }, 10_000).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn arm_two_and_three() {
        for n in [2, 3] {
            let invokers = (1..=n).map(Pid).collect();
            let r = explore_object(&ObjectUnderTest::Arm { n, invokers }, 100_000).unwrap();
            assert!(r.passed(), "n={n}: {r:?}");
        }
    }

    #[test]
    fn lone_arm_invoker_acquires() {
        let r = explore_object(&ObjectUnderTest::Arm { n: 3, invokers: vec![Pid(3)] }, 100).unwrap();
        assert_eq!(r.liveness, Liveness::Pass);
        assert_eq!(r.states, 7);
    }

    #[test]
    fn rejects_bad_invokers() {
        let e = explore_object(&ObjectUnderTest::Arm { n: 2, invokers: vec![Pid(1), Pid(1)] }, 10).unwrap_err();
        assert_eq!(e.field, "invokers");
        let e = explore_object(&ObjectUnderTest::AdoptCommit { proposals: vec![] }, 10).unwrap_err();
        assert_eq!(e.field, "proposals");
    }
}
