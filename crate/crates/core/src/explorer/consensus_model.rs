use serde::Serialize;

use super::{explore_model, ExplorationReport, Liveness, LivenessWitness, Model, Property};
use crate::error::{ConfigError, Fault};
use crate::runtime::{Config, RunError, ScheduledAction, SystemState};
use crate::shared_memory::{RegisterId, Value, Word};
use crate::Pid;

/// The full system under the λ-constrained crash adversary.
pub struct ConsensusModel {
    cfg: Config,
}

impl ConsensusModel {
    pub fn new(cfg: Config) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(ConsensusModel { cfg })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }
}

fn as_fault(e: RunError) -> Fault {
    match e {
        RunError::Fault(f) => f,
        RunError::Config(_) => Fault::Contract("invalid configuration during exploration"),
        RunError::Illegal(_) => Fault::Contract("explorer applied an illegal action"),
    }
}

impl Model for ConsensusModel {
    type State = SystemState;
    type Action = ScheduledAction;

    fn initial(&self) -> SystemState {
        SystemState::new(&self.cfg).expect("validated configuration")
    }

    fn actions(&self, s: &SystemState, out: &mut Vec<ScheduledAction>) {
        s.extend_enabled(&self.cfg, out);
    }

    fn apply(&self, s: &mut SystemState, a: ScheduledAction) -> Result<(), Fault> {
        s.apply(&self.cfg, a).map(drop).map_err(as_fault)
    }

    fn encode(&self, s: &SystemState, out: &mut Vec<u8>) {
        s.encode(out);
    }

    fn check(&self, s: &SystemState, out: &mut Vec<(Property, String)>) {
        let mut first: Option<(Pid, u64)> = None;
        for d in s.decisions() {
            if !self.cfg.inputs.contains(&d.value) {
                out.push((Property::Validity, format!("{} decided unproposed {}", d.pid, d.value)));
            }
            match first {
                None => first = Some((d.pid, d.value)),
                Some((p, v)) if v != d.value => out.push((
                    Property::Agreement,
                    format!("{p} decided {v} but {} decided {}", d.pid, d.value),
                )),
                Some(_) => {}
            }
        }

        let mut dec_values: Vec<u64> = Vec::new();
        if let Ok(Word::Plain(Value::Int(v))) = s.file().read(RegisterId::Dec) {
            dec_values.push(v);
        }
        for pid in s.pids().filter(|&p| !s.is_crashed(p)) {
            dec_values.extend(s.proc(pid).pending_dec_write());
        }
        dec_values.sort_unstable();
        dec_values.dedup();
        if dec_values.len() > 1 {
            out.push((
                Property::DecCoherence,
                format!("DEC and pending DEC writes disagree: {dec_values:?}"),
            ));
        }

        for pid in s.pids() {
            if s.proc(pid).helper_launched()
                && s.check_legal(&self.cfg, ScheduledAction::Crash { pid }).is_ok()
            {
                out.push((
                    Property::CrashAfterHelperLaunch,
                    format!("{pid} launched its helper and may still crash"),
                ));
            }
        }
    }

    fn is_goal(&self, s: &SystemState) -> bool {
        s.all_correct_decided()
    }

    fn pending_process(&self, s: &SystemState) -> Option<Pid> {
        s.undecided_correct().next()
    }

    fn crash_participation(&self, s: &SystemState, a: ScheduledAction) -> Option<usize> {
        a.is_crash().then(|| s.participation())
    }
}

/// Explores every schedule and legal crash pattern of `cfg`.
///
/// `cfg.seed`, `cfg.max_steps` and `cfg.crash_policy` are ignored.
pub fn explore(cfg: &Config, state_cap: usize) -> Result<ExplorationReport<ScheduledAction>, RunError> {
    let model = ConsensusModel::new(cfg.clone())?;
    Ok(explore_model(&model, state_cap)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TightnessOutcome {
    /// A fair lasso on which `witness.pending` never decides.
    Found {
        witness: LivenessWitness<ScheduledAction>,
        states: usize,
        /// No safety violation anywhere in the explored graph.
        safety_clean: bool,
    },
    /// Exploration passed: no liveness counterexample exists.
    NoneFound { states: usize },
    /// The state cap was hit before the graph was complete.
    Inconclusive { states: usize },
}

/// Searches for a run in which a correct process never decides, for a
/// configuration with one crash more than the algorithm tolerates.
pub fn find_tightness_witness(cfg: &Config, state_cap: usize) -> Result<TightnessOutcome, RunError> {
    if cfg.f != cfg.k + 1 {
        return Err(ConfigError::new("f", format!("witness search needs f = k + 1 = {}", cfg.k + 1)).into());
    }
    let report = explore(cfg, state_cap)?;
    Ok(match report.liveness {
        Liveness::NotChecked => TightnessOutcome::Inconclusive { states: report.states },
        Liveness::Pass => TightnessOutcome::NoneFound { states: report.states },
        Liveness::Fail { mut witnesses, .. } => TightnessOutcome::Found {
            witness: witnesses.remove(0),
            states: report.states,
            safety_clean: report.violation_count == 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::replay_state;

    #[test]
    fn two_process_failure_free() {
        let c = Config::new(2, 0, 0, vec![0, 1]);
        let r = explore(&c, 100_000).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.crash_edges_by_participation.is_empty());
        let again = explore(&c, 100_000).unwrap();
        assert_eq!((r.states, r.transitions), (again.states, again.transitions));
    }

    #[test]
    fn initial_failures_only_when_lambda_is_zero() {
        let c = Config::new(2, 2, 2, vec![0, 1]);
        let r = explore(&c, 100_000).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.crash_edges_by_participation.keys().copied().collect::<Vec<_>>(), [0]);
    }

    #[test]
    fn tightness_witness_replays() {
        let c = Config::new(2, 0, 1, vec![0, 1]);
        let TightnessOutcome::Found { witness, safety_clean, .. } = find_tightness_witness(&c, 100_000).unwrap() else {
            panic!("no witness");
        };
        assert!(safety_clean);
        let entry = replay_state(&c, &witness.prefix).unwrap();
        let looped = replay_state(&c, &witness.schedule()).unwrap();
        assert_eq!(entry.digest(), looped.digest());
        assert!(!looped.is_crashed(witness.pending));
        assert_eq!(looped.proc(witness.pending).decision(), None);
    }

    #[test]
    fn truncation_is_not_a_pass() {
        let c = Config::new(2, 1, 1, vec![0, 1]);
        let r = explore(&c, 10).unwrap();
        assert!(r.truncated && !r.passed());
        assert_eq!(r.liveness, Liveness::NotChecked);
    }

    #[test]
    fn witness_needs_one_extra_crash() {
        let c = Config::new(2, 0, 0, vec![0, 1]);
        let RunError::Config(e) = find_tightness_witness(&c, 10).unwrap_err() else {
            panic!()
        };
        assert_eq!(e.field, "f");
    }
}
