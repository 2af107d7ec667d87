//! System composition and the participation-constrained crash adversary.
//!
//! A crash of process `p` is legal only while `p` is alive and undecided,
//! the crash budget `f` is not spent, and at most `λ = n − k` processes have
//! accessed shared memory. Once participation reaches `λ + 1` no further
//! crash can occur.

mod config;
mod trace;

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{lambda_of, Config, CrashPolicy};
pub use trace::{schedule_to_json, ActKind, Op, SchemaError, Trace, TraceEvent};

use crate::consensus::{ProcState, Thread};
use crate::error::{ConfigError, Fault};
use crate::shared_memory::{Layout, RegisterFile, Value};
use crate::{Access, Pid};

/// One scheduler decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "act", rename_all = "lowercase")]
pub enum ScheduledAction {
    Step { pid: Pid, thr: Thread },
    Crash { pid: Pid },
}

impl ScheduledAction {
    pub fn pid(&self) -> Pid {
        match *self {
            ScheduledAction::Step { pid, .. } | ScheduledAction::Crash { pid } => pid,
        }
    }

    pub fn is_crash(&self) -> bool {
        matches!(self, ScheduledAction::Crash { .. })
    }
}

impl fmt::Display for ScheduledAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduledAction::Step { pid, thr } => write!(f, "step({pid}, {})", thr.name()),
            ScheduledAction::Crash { pid } => write!(f, "crash({pid})"),
        }
    }
}

/// Why an action is not enabled.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LegalityRule {
    #[error("no such process")]
    UnknownPid,
    #[error("process has crashed")]
    Crashed,
    #[error("thread is not enabled")]
    ThreadDisabled,
    #[error("process has already decided")]
    Decided,
    #[error("crash budget f = {f} is spent")]
    Budget { f: usize },
    #[error("participation {participating} has bypassed lambda = {lambda}")]
    LambdaBypassed { participating: usize, lambda: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal action {action} at position {position}: {rule}")]
pub struct LegalityError {
    pub position: usize,
    pub action: ScheduledAction,
    pub rule: LegalityRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Illegal(#[from] LegalityError),
    #[error("internal fault: {0}")]
    Fault(#[from] Fault),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecisionRecord {
    pub pid: Pid,
    pub value: u64,
    /// Index of the scheduled action that decided.
    pub step: usize,
}

/// Effect of one applied action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Applied {
    pub action: ScheduledAction,
    /// `None` for crashes.
    pub access: Option<Access>,
    pub decided: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    file: RegisterFile,
    procs: Vec<ProcState>,
    crashed: Vec<bool>,
    participated: Vec<bool>,
    crash_count: usize,
    participating: usize,
    decisions: Vec<Option<DecisionRecord>>,
    actions_applied: usize,
}

impl SystemState {
    pub fn new(cfg: &Config) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let file = RegisterFile::with_layout(std::sync::Arc::new(Layout::new(cfg.n, cfg.k)?));
        let procs = cfg
            .inputs
            .iter()
            .enumerate()
            .map(|(i, &v)| ProcState::new(Pid(i + 1), Value::Int(v), cfg.n, cfg.k))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ConfigError::new("inputs", e.to_string()))?;
        Ok(SystemState {
            file,
            procs,
            crashed: vec![false; cfg.n],
            participated: vec![false; cfg.n],
            crash_count: 0,
            participating: 0,
            decisions: vec![None; cfg.n],
            actions_applied: 0,
        })
    }

    pub fn file(&self) -> &RegisterFile {
        &self.file
    }

    pub fn procs(&self) -> &[ProcState] {
        &self.procs
    }

    pub fn proc(&self, pid: Pid) -> &ProcState {
        &self.procs[pid.index()]
    }

    pub fn is_crashed(&self, pid: Pid) -> bool {
        self.crashed[pid.index()]
    }

    pub fn has_participated(&self, pid: Pid) -> bool {
        self.participated[pid.index()]
    }

    pub fn crash_count(&self) -> usize {
        self.crash_count
    }

    pub fn participation(&self) -> usize {
        self.participating
    }

    pub fn decisions(&self) -> impl Iterator<Item = &DecisionRecord> {
        self.decisions.iter().flatten()
    }

    pub fn pids(&self) -> impl Iterator<Item = Pid> {
        (1..=self.procs.len()).map(Pid)
    }

    /// Processes that are alive and have not decided.
    pub fn undecided_correct(&self) -> impl Iterator<Item = Pid> + '_ {
        self.pids()
            .filter(|&p| !self.is_crashed(p) && self.proc(p).decision().is_none())
    }

    /// Every alive process has decided.
    pub fn all_correct_decided(&self) -> bool {
        self.undecided_correct().next().is_none()
    }

    fn crash_rule(&self, cfg: &Config, pid: Pid) -> Result<(), LegalityRule> {
        self.alive(pid)?;
        if self.proc(pid).decision().is_some() {
            return Err(LegalityRule::Decided);
        }
        if self.crash_count >= cfg.f {
            return Err(LegalityRule::Budget { f: cfg.f });
        }
        if self.participating > cfg.lambda() {
            return Err(LegalityRule::LambdaBypassed {
                participating: self.participating,
                lambda: cfg.lambda(),
            });
        }
        Ok(())
    }

    fn alive(&self, pid: Pid) -> Result<(), LegalityRule> {
        if pid.0 == 0 || pid.0 > self.procs.len() {
            return Err(LegalityRule::UnknownPid);
        }
        if self.is_crashed(pid) {
            return Err(LegalityRule::Crashed);
        }
        Ok(())
    }

    pub fn check_legal(&self, cfg: &Config, action: ScheduledAction) -> Result<(), LegalityRule> {
        match action {
            ScheduledAction::Step { pid, thr } => {
                self.alive(pid)?;
                if self.proc(pid).is_enabled(thr) {
                    Ok(())
                } else {
                    Err(LegalityRule::ThreadDisabled)
                }
            }
            ScheduledAction::Crash { pid } => self.crash_rule(cfg, pid),
        }
    }

    /// Pid-major steps (main before helper), then crashes.
    pub fn enabled_actions(&self, cfg: &Config) -> Vec<ScheduledAction> {
        let mut out = Vec::with_capacity(2 * self.procs.len());
        self.extend_enabled(cfg, &mut out);
        out
    }

    pub(crate) fn extend_enabled(&self, cfg: &Config, out: &mut Vec<ScheduledAction>) {
        for (p, proc) in self.procs.iter().enumerate() {
            if !self.crashed[p] {
                out.extend(proc.enabled_threads().map(|thr| ScheduledAction::Step { pid: Pid(p + 1), thr }));
            }
        }
        for pid in self.pids() {
            if self.crash_rule(cfg, pid).is_ok() {
                out.push(ScheduledAction::Crash { pid });
            }
        }
    }

    pub fn apply(&mut self, cfg: &Config, action: ScheduledAction) -> Result<Applied, RunError> {
        self.check_legal(cfg, action).map_err(|rule| LegalityError {
            position: self.actions_applied,
            action,
            rule,
        })?;
        let index = self.actions_applied;
        self.actions_applied += 1;
        match action {
            ScheduledAction::Crash { pid } => {
                self.crashed[pid.index()] = true;
                self.crash_count += 1;
                Ok(Applied {
                    action,
                    access: None,
                    decided: None,
                })
            }
            ScheduledAction::Step { pid, thr } => {
                let out = self.procs[pid.index()].step(thr, &mut self.file)?;
                if out.access.is_shared() && !self.participated[pid.index()] {
                    self.participated[pid.index()] = true;
                    self.participating += 1;
                }
                if let Some(value) = out.decided {
                    self.decisions[pid.index()] = Some(DecisionRecord { pid, value, step: index });
                }
                Ok(Applied {
                    action,
                    access: Some(out.access),
                    decided: out.decided,
                })
            }
        }
    }

    /// Canonical key: registers, live process states, crash and participation sets.
    ///
    /// A crashed process can never act again, so its local state is omitted.
    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        self.file.encode(out);
        for (p, proc) in self.procs.iter().enumerate() {
            if self.crashed[p] {
                out.push(0xff);
            } else {
                proc.encode(out);
            }
        }
        let mut bits = 0u64;
        for p in 0..self.procs.len() {
            bits |= (self.participated[p] as u64) << (2 * p);
            bits |= (self.crashed[p] as u64) << (2 * p + 1);
        }
        crate::shared_memory::push_varint(out, 0, bits);
    }

    /// Stable digest of the canonical key.
    pub fn digest(&self) -> u64 {
        let mut buf = Vec::with_capacity(64);
        self.encode(&mut buf);
        crate::shared_memory::fnv1a(&buf)
    }
}

/// Fresh system for `cfg`.
pub fn init_system(cfg: &Config) -> Result<SystemState, ConfigError> {
    SystemState::new(cfg)
}

struct Recorder {
    trace: Trace,
}

impl Recorder {
    fn new(cfg: &Config) -> Self {
        Recorder {
            trace: Trace::new(cfg.clone()),
        }
    }

    fn record(&mut self, s: &SystemState, applied: &Applied) {
        self.trace.push_applied(applied, s.participation(), s.crash_count());
    }

    fn finish(mut self, s: &SystemState) -> Trace {
        self.trace.complete = s.all_correct_decided();
        self.trace.decisions = s.decisions().map(|d| (d.pid.0, d.value)).collect();
        self.trace
    }
}

/// One seeded run under `cfg.crash_policy`, stopping when every alive
/// process has decided or after `cfg.max_steps` actions.
pub fn run_random(cfg: &Config) -> Result<Trace, RunError> {
    let mut s = SystemState::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rec = Recorder::new(cfg);
    let mut steps = Vec::new();
    let mut crashes = Vec::new();
    let mut actions = Vec::new();
    for _ in 0..cfg.max_steps {
        if s.all_correct_decided() {
            break;
        }
        actions.clear();
        s.extend_enabled(cfg, &mut actions);
        steps.clear();
        crashes.clear();
        for &a in &actions {
            if a.is_crash() {
                crashes.push(a);
            } else {
                steps.push(a);
            }
        }
        let step = *steps.choose(&mut rng).ok_or(Fault::Contract("undecided process with no enabled step"))?;
        let crash = match cfg.crash_policy {
            CrashPolicy::None => None,
            CrashPolicy::Eager => crashes.choose(&mut rng).copied(),
            CrashPolicy::Random(p) => {
                if !crashes.is_empty() && rng.gen_bool(p) {
                    crashes.choose(&mut rng).copied()
                } else {
                    None
                }
            }
            CrashPolicy::LatestLegal => {
                let first_access = !s.has_participated(step.pid());
                if first_access && s.participation() == cfg.lambda() {
                    crashes.choose(&mut rng).copied()
                } else {
                    None
                }
            }
        };
        let applied = s.apply(cfg, crash.unwrap_or(step))?;
        rec.record(&s, &applied);
    }
    Ok(rec.finish(&s))
}

/// Applies `schedule` in order; fails at the first illegal action.
pub fn run_schedule(cfg: &Config, schedule: &[ScheduledAction]) -> Result<Trace, RunError> {
    let mut s = SystemState::new(cfg)?;
    let mut rec = Recorder::new(cfg);
    for &a in schedule {
        let applied = s.apply(cfg, a)?;
        rec.record(&s, &applied);
    }
    Ok(rec.finish(&s))
}

/// Final state after `schedule`, for checking explorer witnesses.
pub fn replay_state(cfg: &Config, schedule: &[ScheduledAction]) -> Result<SystemState, RunError> {
    let mut s = SystemState::new(cfg)?;
    for &a in schedule {
        s.apply(cfg, a)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shared_memory::{RegisterId, Word};

    fn cfg(n: usize, k: usize, f: usize, inputs: &[u64]) -> Config {
        Config::new(n, k, f, inputs.to_vec())
    }

    fn step(p: usize) -> ScheduledAction {
        ScheduledAction::Step { pid: Pid(p), thr: Thread::Main }
    }

    fn crash(p: usize) -> ScheduledAction {
        ScheduledAction::Crash { pid: Pid(p) }
    }

    #[test]
    fn init_system_places_procs_at_line_one() {
        let c = cfg(2, 1, 1, &[0, 1]);
        let s = init_system(&c).unwrap();
        assert_eq!(s.procs().len(), 2);
        assert!(s.procs().iter().all(|p| p.main_pc() == crate::consensus::MainPc::WriteInput));
        assert_eq!((s.participation(), s.crash_count()), (0, 0));
        assert_eq!(init_system(&cfg(3, 4, 0, &[0, 0, 0])).unwrap_err().field, "k");
    }

    #[test]
    fn crash_actions_follow_lambda_rule() {
        let c = cfg(2, 1, 1, &[0, 1]);
        let mut s = init_system(&c).unwrap();
        assert_eq!(s.enabled_actions(&c), [step(1), step(2), crash(1), crash(2)]);
        s.apply(&c, step(1)).unwrap();
        assert_eq!(s.participation(), 1);
        assert!(s.enabled_actions(&c).contains(&crash(2)));
        s.apply(&c, step(2)).unwrap();
        assert_eq!(s.participation(), 2);
        assert!(s.enabled_actions(&c).iter().all(|a| !a.is_crash()));
        let err = s.apply(&c, crash(2)).unwrap_err();
        assert!(matches!(
            err,
            RunError::Illegal(LegalityError {
                rule: LegalityRule::LambdaBypassed { participating: 2, lambda: 1 },
                ..
            })
        ));
    }

    #[test]
    fn crash_at_lambda_boundary_is_legal() {
        let c = cfg(3, 1, 1, &[0, 1, 1]);
        let mut s = init_system(&c).unwrap();
        s.apply(&c, step(1)).unwrap();
        s.apply(&c, step(3)).unwrap();
        assert_eq!(s.participation(), c.lambda());
        s.apply(&c, crash(2)).unwrap();
        assert!(s.is_crashed(Pid(2)));
        assert!(s.enabled_actions(&c).iter().all(|a| a.pid() != Pid(2)));
    }

    #[test]
    fn any_time_crashes_when_k_is_zero() {
        let c = cfg(2, 0, 2, &[0, 1]);
        let mut s = init_system(&c).unwrap();
        for _ in 0..5 {
            assert!(s.enabled_actions(&c).iter().any(|a| a.is_crash()));
            let a = s.enabled_actions(&c)[0];
            s.apply(&c, a).unwrap();
        }
    }

    #[test]
    fn first_step_writes_input_and_participates() {
        let c = cfg(2, 1, 1, &[4, 1]);
        let mut s = init_system(&c).unwrap();
        let a = s.apply(&c, step(1)).unwrap();
        assert_eq!(a.access, Some(Access::Write(RegisterId::Input(1), Word::int(4))));
        assert!(s.has_participated(Pid(1)));
        assert!(!s.has_participated(Pid(2)));
    }

    #[test]
    fn budget_enforced() {
        let c = cfg(3, 3, 1, &[0, 1, 1]);
        let err = run_schedule(&c, &[crash(1), crash(2)]).unwrap_err();
        assert!(matches!(
            err,
            RunError::Illegal(LegalityError { position: 1, rule: LegalityRule::Budget { f: 1 }, .. })
        ));
    }

    #[test]
    fn solo_random_run() {
        let mut c = cfg(1, 0, 0, &[7]);
        c.seed = 99;
        let t = run_random(&c).unwrap();
        assert!(t.complete);
        assert_eq!(t.decisions.get(&1), Some(&7));
    }

    #[test]
    fn partner_crash_replay() {
        let c = cfg(2, 1, 1, &[3, 9]);
        let mut sched = vec![crash(2)];
        sched.extend(std::iter::repeat_n(step(1), 1 + 2 + 1 + 6 + 2));
        let s = replay_state(&c, &sched).unwrap();
        assert_eq!(s.proc(Pid(1)).decision(), Some(3));
        assert_eq!(s.proc(Pid(1)).collected(), [Value::Int(3), Value::Bot]);
        assert!(s.all_correct_decided());
    }

    #[test]
    fn random_runs_are_deterministic() {
        let mut c = cfg(3, 1, 1, &[0, 1, 1]);
        c.seed = 42;
        c.crash_policy = CrashPolicy::Random(0.1);
        let a = run_random(&c).unwrap().to_jsonl();
        let b = run_random(&c).unwrap().to_jsonl();
        assert_eq!(a, b);
    }

    #[test]
    fn eager_policy_spends_budget_early() {
        let mut c = cfg(3, 2, 2, &[0, 1, 1]);
        c.crash_policy = CrashPolicy::Eager;
        let t = run_random(&c).unwrap();
        let crashes: Vec<_> = t.events.iter().filter(|e| e.act == ActKind::Crash).map(|e| e.i).collect();
        assert_eq!(crashes, [0, 1]);
        assert!(t.complete);
    }

    #[test]
    fn latest_legal_crashes_at_the_threshold() {
        for seed in 0..20 {
            let mut c = cfg(4, 2, 2, &[0, 1, 0, 1]);
            c.seed = seed;
            c.crash_policy = CrashPolicy::LatestLegal;
            let t = run_random(&c).unwrap();
            for e in t.events.iter().filter(|e| e.act == ActKind::Crash) {
                assert_eq!(e.parts, c.lambda());
            }
            assert!(t.complete);
        }
    }
}
