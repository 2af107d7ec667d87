//! Run traces and their JSON Lines form.
//!
//! ```text
//! {"cfg":{"n":..,"k":..,"f":..,"lambda":..,"inputs":[..],"seed":..,"max_steps":..,"crash_policy":".."}}
//! {"i":0,"act":"step","pid":1,"thr":"main","op":"write","reg":"INPUT[1]","val":0,"parts":1,"crashes":0}
//! ...
//! {"complete":true,"decisions":{"1":0,"2":0}}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Applied, Config, CrashPolicy, ScheduledAction};
use crate::consensus::Thread;
use crate::shared_memory::{RegisterId, Word};
use crate::{Access, Pid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    Step,
    Crash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Read,
    Write,
    Local,
    Decide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub i: usize,
    pub act: ActKind,
    pub pid: Pid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thr: Option<Thread>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<Op>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<RegisterId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<Word>,
    /// Participating processes after this event.
    pub parts: usize,
    /// Crashes so far, including this event.
    pub crashes: usize,
}

impl TraceEvent {
    /// The scheduler action this record stems from; `None` for decide records.
    pub fn action(&self) -> Option<ScheduledAction> {
        match (self.act, self.op) {
            (_, Some(Op::Decide)) => None,
            (ActKind::Crash, _) => Some(ScheduledAction::Crash { pid: self.pid }),
            (ActKind::Step, _) => Some(ScheduledAction::Step {
                pid: self.pid,
                thr: self.thr.unwrap_or(Thread::Main),
            }),
        }
    }

    pub fn is_shared_access(&self) -> bool {
        matches!(self.op, Some(Op::Read | Op::Write))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("trace is empty or lacks a header/footer")]
    Truncated,
}

fn line_err(line: usize, reason: impl ToString) -> SchemaError {
    SchemaError::Line {
        line,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub config: Config,
    pub events: Vec<TraceEvent>,
    /// Pid to decided value.
    pub decisions: BTreeMap<usize, u64>,
    /// Every alive process decided by the end of the run.
    pub complete: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderCfg {
    n: usize,
    k: usize,
    f: usize,
    lambda: usize,
    inputs: Vec<u64>,
    seed: u64,
    max_steps: u64,
    crash_policy: CrashPolicy,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    cfg: HeaderCfg,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Footer {
    complete: bool,
    decisions: BTreeMap<usize, u64>,
}

impl Trace {
    pub fn new(config: Config) -> Self {
        Trace {
            config,
            events: Vec::new(),
            decisions: BTreeMap::new(),
            complete: false,
        }
    }

    pub(crate) fn push_applied(&mut self, applied: &Applied, parts: usize, crashes: usize) {
        let mut ev = TraceEvent {
            i: self.events.len(),
            act: ActKind::Step,
            pid: applied.action.pid(),
            thr: None,
            op: None,
            reg: None,
            val: None,
            parts,
            crashes,
        };
        match applied.action {
            ScheduledAction::Crash { .. } => ev.act = ActKind::Crash,
            ScheduledAction::Step { thr, .. } => {
                ev.thr = Some(thr);
                match applied.access {
                    Some(Access::Read(r, w)) => (ev.op, ev.reg, ev.val) = (Some(Op::Read), Some(r), Some(w)),
                    Some(Access::Write(r, w)) => (ev.op, ev.reg, ev.val) = (Some(Op::Write), Some(r), Some(w)),
                    Some(Access::Local) | None => ev.op = Some(Op::Local),
                }
            }
        }
        self.events.push(ev.clone());
        if let Some(v) = applied.decided {
            ev.i += 1;
            ev.op = Some(Op::Decide);
            ev.reg = None;
            ev.val = Some(Word::int(v));
            self.events.push(ev);
        }
    }

    /// The scheduler actions that produced this trace.
    pub fn schedule(&self) -> Vec<ScheduledAction> {
        self.events.iter().filter_map(TraceEvent::action).collect()
    }

    pub fn crash_count(&self) -> usize {
        self.events.iter().filter(|e| e.act == ActKind::Crash).count()
    }

    pub fn crashed(&self) -> impl Iterator<Item = Pid> + '_ {
        self.events.iter().filter(|e| e.act == ActKind::Crash).map(|e| e.pid)
    }

    pub fn to_jsonl(&self) -> String {
        let c = &self.config;
        let header = Header {
            cfg: HeaderCfg {
                n: c.n,
                k: c.k,
                f: c.f,
                lambda: c.lambda(),
                inputs: c.inputs.clone(),
                seed: c.seed,
                max_steps: c.max_steps,
                crash_policy: c.crash_policy,
            },
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        let footer = Footer {
            complete: self.complete,
            decisions: self.decisions.clone(),
        };
        out.push_str(&serde_json::to_string(&footer).expect("footer serializes"));
        out.push('\n');
        out
    }

    /// Parses and structurally validates a JSON Lines trace.
    pub fn from_jsonl(text: &str) -> Result<Trace, SchemaError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        if lines.len() < 2 {
            return Err(SchemaError::Truncated);
        }
        let (hl, htext) = lines[0];
        let header: Header = serde_json::from_str(htext).map_err(|e| line_err(hl, e))?;
        let h = header.cfg;
        let config = Config {
            n: h.n,
            k: h.k,
            f: h.f,
            inputs: h.inputs,
            seed: h.seed,
            max_steps: h.max_steps,
            crash_policy: h.crash_policy,
        };
        config.validate().map_err(|e| line_err(hl, e))?;
        if h.lambda != config.lambda() {
            return Err(line_err(hl, format!("lambda {} != n - k = {}", h.lambda, config.lambda())));
        }
        let (fl, ftext) = lines[lines.len() - 1];
        let footer: Footer = serde_json::from_str(ftext).map_err(|e| line_err(fl, e))?;
        let mut events = Vec::with_capacity(lines.len() - 2);
        for &(ln, l) in &lines[1..lines.len() - 1] {
            let e: TraceEvent = serde_json::from_str(l).map_err(|e| line_err(ln, e))?;
            if e.i != events.len() {
                return Err(line_err(ln, format!("event index {} out of sequence", e.i)));
            }
            if e.pid.0 == 0 || e.pid.0 > config.n {
                return Err(line_err(ln, format!("pid {} out of range", e.pid.0)));
            }
            let shape_ok = match (e.act, e.op) {
                (ActKind::Crash, None) => e.thr.is_none() && e.reg.is_none() && e.val.is_none(),
                (ActKind::Crash, Some(_)) => false,
                (ActKind::Step, Some(Op::Read | Op::Write)) => e.thr.is_some() && e.reg.is_some() && e.val.is_some(),
                (ActKind::Step, Some(Op::Local)) => e.thr.is_some() && e.reg.is_none(),
                (ActKind::Step, Some(Op::Decide)) => {
                    e.reg.is_none() && matches!(e.val, Some(Word::Plain(crate::Value::Int(_))))
                }
                (ActKind::Step, None) => false,
            };
            if !shape_ok {
                return Err(line_err(ln, "fields inconsistent with act/op"));
            }
            events.push(e);
        }
        Ok(Trace {
            config,
            events,
            decisions: footer.decisions,
            complete: footer.complete,
        })
    }
}

/// Serializes a schedule as a JSON array of actions.
pub fn schedule_to_json(schedule: &[ScheduledAction]) -> String {
    serde_json::to_string(schedule).expect("schedule serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{run_random, run_schedule};

    fn sample() -> Trace {
        let mut c = Config::new(3, 1, 1, vec![0, 1, 1]);
        c.seed = 7;
        c.crash_policy = CrashPolicy::Random(0.2);
        run_random(&c).unwrap()
    }

    #[test]
    fn jsonl_round_trip() {
        let t = sample();
        let text = t.to_jsonl();
        let back = Trace::from_jsonl(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn header_echoes_lambda() {
        let mut c = Config::new(9, 3, 3, vec![0, 1, 0, 1, 0, 1, 0, 1, 0]);
        c.max_steps = 10;
        let t = run_random(&c).unwrap();
        let first = t.to_jsonl().lines().next().unwrap().to_string();
        assert!(first.contains(r#""lambda":6"#), "{first}");
        assert!(!t.complete);
    }

    #[test]
    fn replay_reproduces_bytes() {
        let t = sample();
        let r = run_schedule(&t.config, &t.schedule()).unwrap();
        assert_eq!(r.to_jsonl(), t.to_jsonl());
    }

    #[test]
    fn record_shapes() {
        let c = Config::new(1, 0, 0, vec![7]);
        let t = run_random(&c).unwrap();
        let text = t.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[1],
            r#"{"i":0,"act":"step","pid":1,"thr":"main","op":"write","reg":"INPUT[1]","val":7,"parts":1,"crashes":0}"#
        );
        assert!(lines.iter().any(|l| l.contains(r#""op":"local""#)));
        assert!(lines.iter().any(|l| l.contains(r#""val":{"m":"single","v":7}"#)));
        let decide = lines[lines.len() - 2];
        assert!(decide.contains(r#""op":"decide""#) && decide.contains(r#""val":7"#), "{decide}");
        assert_eq!(lines[lines.len() - 1], r#"{"complete":true,"decisions":{"1":7}}"#);
    }

    #[test]
    fn malformed_traces_rejected() {
        let text = sample().to_jsonl();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines.swap(1, 2);
        assert!(matches!(Trace::from_jsonl(&lines.join("\n")), Err(SchemaError::Line { line: 2, .. })));
        assert!(Trace::from_jsonl("").is_err());
        assert!(Trace::from_jsonl(r#"{"cfg":{}}"#).is_err());
        let bad = text.replacen(r#""act":"step""#, r#""act":"crash""#, 1);
        assert!(Trace::from_jsonl(&bad).is_err());
    }

    #[test]
    fn schedule_json_shape() {
        let s = [
            ScheduledAction::Step { pid: Pid(1), thr: Thread::Helper },
            ScheduledAction::Crash { pid: Pid(2) },
        ];
        let j = schedule_to_json(&s);
        assert_eq!(j, r#"[{"act":"step","pid":1,"thr":"T"},{"act":"crash","pid":2}]"#);
        assert_eq!(serde_json::from_str::<Vec<ScheduledAction>>(&j).unwrap(), s);
    }
}
