//! Consensus properties and failure-model legality, evaluated on a finished trace.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::runtime::{ActKind, Config, Op, SchemaError, Trace};
use crate::shared_memory::{Value, Word};
use crate::Pid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Validity {
    Pass,
    /// A decision that is nobody's input.
    Fail { pid: Pid, value: u64, step: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Agreement {
    Pass,
    Fail { first: DecisionWitness, second: DecisionWitness },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecisionWitness {
    pub pid: Pid,
    pub value: u64,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Termination {
    Pass,
    /// The run hit its step cap; liveness is not refuted by a finite prefix.
    Inconclusive { undecided: Vec<Pid> },
    /// The trace claims completion yet a correct process never decided.
    Fail { undecided: Vec<Pid> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Legality {
    Pass,
    Fail { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub validity: Validity,
    pub agreement: Agreement,
    pub termination: Termination,
    pub legality: Legality,
    pub complete: bool,
}

impl Verdict {
    /// A safety property, legality, or a claimed-complete run failed.
    pub fn has_violation(&self) -> bool {
        !matches!(self.validity, Validity::Pass)
            || !matches!(self.agreement, Agreement::Pass)
            || !matches!(self.legality, Legality::Pass)
            || matches!(self.termination, Termination::Fail { .. })
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self.termination, Termination::Inconclusive { .. })
    }

    pub fn all_pass(&self) -> bool {
        !self.has_violation() && !self.is_inconclusive()
    }
}

fn legality(trace: &Trace, cfg: &Config) -> Legality {
    let n = cfg.n;
    let mut participated = vec![false; n];
    let mut crashed = vec![false; n];
    let mut decided = vec![false; n];
    let (mut parts, mut crashes) = (0, 0);
    let fail = |step, reason: String| Legality::Fail { step, reason };
    for e in &trace.events {
        let p = e.pid.index();
        match e.act {
            ActKind::Step => {
                if crashed[p] {
                    return fail(e.i, format!("{} stepped after crashing", e.pid));
                }
                if e.is_shared_access() && !participated[p] {
                    participated[p] = true;
                    parts += 1;
                }
                if e.op == Some(Op::Decide) {
                    if decided[p] {
                        return fail(e.i, format!("{} decided twice", e.pid));
                    }
                    decided[p] = true;
                } else if decided[p] {
                    return fail(e.i, format!("{} stepped after deciding", e.pid));
                }
            }
            ActKind::Crash => {
                if crashed[p] {
                    return fail(e.i, format!("{} crashed twice", e.pid));
                }
                if decided[p] {
                    return fail(e.i, format!("{} crashed after deciding", e.pid));
                }
                if parts > cfg.lambda() {
                    return fail(
                        e.i,
                        format!("crash at participation {parts} > lambda = {}", cfg.lambda()),
                    );
                }
                if crashes + 1 > cfg.f {
                    return fail(e.i, format!("crash exceeds budget f = {}", cfg.f));
                }
                crashed[p] = true;
                crashes += 1;
            }
        }
        if e.parts != parts || e.crashes != crashes {
            return fail(
                e.i,
                format!(
                    "recorded parts/crashes {}/{} but derived {parts}/{crashes}",
                    e.parts, e.crashes
                ),
            );
        }
    }
    Legality::Pass
}

/// Evaluates `trace` against the consensus specification under `cfg`.
pub fn check_trace(trace: &Trace, cfg: &Config) -> Result<Verdict, SchemaError> {
    let bad = |line: usize, reason: String| SchemaError::Line { line, reason };
    let mut decisions: BTreeMap<usize, DecisionWitness> = BTreeMap::new();
    for (idx, e) in trace.events.iter().enumerate() {
        if e.i != idx {
            return Err(bad(idx + 2, format!("event index {} out of sequence", e.i)));
        }
        if e.pid.0 == 0 || e.pid.0 > cfg.n {
            return Err(bad(idx + 2, format!("pid {} out of range", e.pid.0)));
        }
        if e.op == Some(Op::Decide) {
            let Some(Word::Plain(Value::Int(value))) = e.val else {
                return Err(bad(idx + 2, "decide record without an integer value".into()));
            };
            decisions.entry(e.pid.0).or_insert(DecisionWitness {
                pid: e.pid,
                value,
                step: Some(e.i),
            });
        }
    }
    for (&pid, &value) in &trace.decisions {
        if pid == 0 || pid > cfg.n {
            return Err(bad(trace.events.len() + 2, format!("decision for unknown pid {pid}")));
        }
        let w = decisions.entry(pid).or_insert(DecisionWitness {
            pid: Pid(pid),
            value,
            step: None,
        });
        if w.value != value {
            return Err(bad(
                trace.events.len() + 2,
                format!("footer decision {value} for p{pid} contradicts decide record"),
            ));
        }
    }

    let validity = decisions
        .values()
        .find(|d| !cfg.inputs.contains(&d.value))
        .map_or(Validity::Pass, |d| Validity::Fail {
            pid: d.pid,
            value: d.value,
            step: d.step,
        });

    let mut agreement = Agreement::Pass;
    if let Some(first) = decisions.values().next() {
        if let Some(second) = decisions.values().find(|d| d.value != first.value) {
            agreement = Agreement::Fail {
                first: *first,
                second: *second,
            };
        }
    }

    let crashed: Vec<Pid> = trace.crashed().collect();
    let undecided: Vec<Pid> = (1..=cfg.n)
        .map(Pid)
        .filter(|p| !crashed.contains(p) && !decisions.contains_key(&p.0))
        .collect();
    let termination = match (trace.complete, undecided.is_empty()) {
        (true, true) => Termination::Pass,
        (false, _) => Termination::Inconclusive { undecided },
        (true, false) => Termination::Fail { undecided },
    };

    Ok(Verdict {
        validity,
        agreement,
        termination,
        legality: legality(trace, cfg),
        complete: trace.complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{run_random, CrashPolicy, TraceEvent};

    #[test]
    fn solo_run_passes() {
        let c = Config::new(1, 0, 0, vec![7]);
        let t = run_random(&c).unwrap();
        let v = check_trace(&t, &c).unwrap();
        assert!(v.all_pass(), "{v:?}");
    }

    #[test]
    fn forged_disagreement() {
        let c = Config::new(2, 0, 0, vec![0, 1]);
        let mut t = Trace::new(c.clone());
        t.complete = true;
        t.decisions = [(1, 0), (2, 1)].into();
        let v = check_trace(&t, &c).unwrap();
        let Agreement::Fail { first, second } = v.agreement else {
            panic!("{v:?}")
        };
        assert_eq!((first.pid, second.pid), (Pid(1), Pid(2)));
        assert_eq!(v.validity, Validity::Pass);
        assert!(v.has_violation());
    }

    #[test]
    fn forged_invalid_value() {
        let c = Config::new(2, 0, 0, vec![0, 1]);
        let mut t = Trace::new(c.clone());
        t.decisions = [(2, 5)].into();
        let v = check_trace(&t, &c).unwrap();
        assert!(matches!(v.validity, Validity::Fail { pid: Pid(2), value: 5, .. }));
        assert!(v.is_inconclusive());
    }

    #[test]
    fn forged_late_crash() {
        // n = 3, k = 2: lambda = 1, but the crash happens at participation 2.
        let c = Config::new(3, 2, 2, vec![0, 1, 1]);
        let mut t = Trace::new(c.clone());
        let step = |i, p, parts| TraceEvent {
            i,
            act: ActKind::Step,
            pid: Pid(p),
            thr: Some(crate::consensus::Thread::Main),
            op: Some(Op::Write),
            reg: Some(crate::RegisterId::Input(p)),
            val: Some(Word::int(0)),
            parts,
            crashes: 0,
        };
        t.events.push(step(0, 1, 1));
        t.events.push(step(1, 2, 2));
        t.events.push(TraceEvent {
            i: 2,
            act: ActKind::Crash,
            pid: Pid(3),
            thr: None,
            op: None,
            reg: None,
            val: None,
            parts: 2,
            crashes: 1,
        });
        let v = check_trace(&t, &c).unwrap();
        let Legality::Fail { step, reason } = &v.legality else {
            panic!("{v:?}")
        };
        assert_eq!(*step, 2);
        assert!(reason.contains("lambda"), "{reason}");
    }

    #[test]
    fn claimed_complete_with_undecided_fails_termination() {
        let c = Config::new(2, 0, 0, vec![0, 1]);
        let mut t = Trace::new(c.clone());
        t.complete = true;
        t.decisions = [(1, 0)].into();
        let v = check_trace(&t, &c).unwrap();
        assert_eq!(v.termination, Termination::Fail { undecided: vec![Pid(2)] });
    }

    #[test]
    fn incomplete_run_is_inconclusive() {
        let mut c = Config::new(3, 1, 1, vec![0, 1, 1]);
        c.max_steps = 5;
        let t = run_random(&c).unwrap();
        let v = check_trace(&t, &c).unwrap();
        assert!(v.is_inconclusive() && !v.has_violation());
    }

    #[test]
    fn verdict_json() {
        let c = Config::new(3, 1, 1, vec![0, 1, 1]);
        let mut c2 = c.clone();
        c2.seed = 42;
        c2.crash_policy = CrashPolicy::Random(0.1);
        let t = run_random(&c2).unwrap();
        let v = check_trace(&t, &c2).unwrap();
        assert!(v.all_pass(), "{v:?}");
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"validity":{"status":"pass"},"agreement":{"status":"pass"},"termination":{"status":"pass"},"legality":{"status":"pass"},"complete":true}"#
        );
    }
}
