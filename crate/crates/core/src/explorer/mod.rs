//! Exhaustive explicit-state exploration.
//!
//! Every reachable state is enumerated under every schedule and every legal
//! crash choice, deduplicated on its canonical byte key. Safety properties
//! are checked on each state. Termination is checked on the finished graph:
//! a fair run of a finite system eventually stays inside one bottom SCC and
//! visits all of its states, so the system terminates under fairness iff no
//! bottom SCC contains a state in which some live process is still pending.

mod consensus_model;
mod objects;
mod store;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Serialize, Serializer};

pub use consensus_model::{explore, find_tightness_witness, ConsensusModel, TightnessOutcome};
pub use objects::{explore_object, AcModel, ArmModel, ObjectStep, ObjectUnderTest};

use crate::error::Fault;
use crate::scc::{bottom_components, tarjan, Graph};
use crate::shared_memory::fnv1a;
use crate::Pid;
use store::StateStore;

pub const DEFAULT_STATE_CAP: usize = 5_000_000;

/// Violations kept with a replayable schedule; further ones are only counted.
const KEPT_VIOLATIONS: usize = 16;
/// Bad bottom SCCs for which a lasso witness is built.
const KEPT_WITNESSES: usize = 3;
/// Above this many edges inside an SCC, the witness cycle covers states only.
const EDGE_COVER_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    /// A decided value was not proposed.
    Validity,
    /// Two processes decided differently.
    Agreement,
    /// Pending or completed writes of `DEC` disagree.
    DecCoherence,
    /// A process that launched its helper thread can still be crashed.
    CrashAfterHelperLaunch,
    AcValidity,
    AcObligation,
    AcWeakAgreement,
    /// An adopt-commit cursor did not finish in exactly its step bound.
    AcTermination,
    MutualExclusion,
}

/// State-machine view the engine explores.
pub trait Model {
    type State: Clone;
    type Action: Copy + PartialEq + fmt::Debug + Serialize;

    fn initial(&self) -> Self::State;
    fn actions(&self, s: &Self::State, out: &mut Vec<Self::Action>);
    fn apply(&self, s: &mut Self::State, a: Self::Action) -> Result<(), Fault>;
    fn encode(&self, s: &Self::State, out: &mut Vec<u8>);
    /// Appends every safety violation present in `s`.
    fn check(&self, s: &Self::State, out: &mut Vec<(Property, String)>);
    /// Whether `s` satisfies the liveness goal.
    fn is_goal(&self, s: &Self::State) -> bool;
    /// A live process that has not reached the goal in `s`.
    fn pending_process(&self, s: &Self::State) -> Option<Pid>;
    /// Participation count at which `a` crashes a process, if it is a crash.
    fn crash_participation(&self, _s: &Self::State, _a: Self::Action) -> Option<usize> {
        None
    }
}

fn hex_digest<S: Serializer>(d: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{d:016x}"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyViolation<A> {
    #[serde(serialize_with = "hex_digest")]
    pub digest: u64,
    pub property: Property,
    pub detail: String,
    /// Shortest schedule from the initial state to the violating state.
    pub schedule: Vec<A>,
}

/// A fair lasso: after `prefix`, repeating `cycle` forever stays inside a
/// bottom SCC where `pending` never reaches the goal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LivenessWitness<A> {
    #[serde(serialize_with = "hex_digest")]
    pub digest: u64,
    pub scc_size: usize,
    pub pending: Pid,
    pub prefix: Vec<A>,
    pub cycle: Vec<A>,
}

impl<A: Clone> LivenessWitness<A> {
    /// Prefix followed by one traversal of the cycle.
    pub fn schedule(&self) -> Vec<A> {
        let mut s = self.prefix.clone();
        s.extend_from_slice(&self.cycle);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Liveness<A> {
    Pass,
    Fail {
        bad_sccs: usize,
        witnesses: Vec<LivenessWitness<A>>,
    },
    /// Exploration was truncated.
    NotChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationReport<A> {
    pub states: usize,
    pub transitions: usize,
    pub truncated: bool,
    pub terminal_states: usize,
    pub bottom_sccs: usize,
    pub violation_count: usize,
    pub safety_violations: Vec<SafetyViolation<A>>,
    pub liveness: Liveness<A>,
    /// Crash edges keyed by the participation count at which they fire.
    pub crash_edges_by_participation: BTreeMap<usize, u64>,
}

impl<A> ExplorationReport<A> {
    /// Exhaustive, no safety violation, and fair termination holds.
    pub fn passed(&self) -> bool {
        !self.truncated && self.violation_count == 0 && matches!(self.liveness, Liveness::Pass)
    }

    pub fn safety_clean(&self) -> bool {
        self.violation_count == 0
    }
}

struct Exploration<'m, M: Model> {
    model: &'m M,
    store: StateStore,
    graph: Graph,
    goal: Vec<bool>,
    violations: Vec<(u32, Property, String)>,
    violation_count: usize,
    crash_hist: BTreeMap<usize, u64>,
    truncated: bool,
}

impl<'m, M: Model> Exploration<'m, M> {
    fn run(model: &'m M, state_cap: usize) -> Result<Self, Fault> {
        let mut ex = Exploration {
            model,
            store: StateStore::default(),
            graph: Graph::default(),
            goal: Vec::new(),
            violations: Vec::new(),
            violation_count: 0,
            crash_hist: BTreeMap::new(),
            truncated: false,
        };
        let mut key = Vec::with_capacity(128);
        let init = model.initial();
        model.encode(&init, &mut key);
        ex.store.intern(&key);
        ex.graph.add_node();
        ex.goal.push(false);

        let mut stack = vec![(0u32, init)];
        let mut actions = Vec::new();
        let mut succ = Vec::new();
        let mut found = Vec::new();
        while let Some((id, s)) = stack.pop() {
            found.clear();
            model.check(&s, &mut found);
            for (prop, detail) in found.drain(..) {
                ex.violation_count += 1;
                if ex.violations.len() < KEPT_VIOLATIONS {
                    ex.violations.push((id, prop, detail));
                }
            }
            ex.goal[id as usize] = model.is_goal(&s);
            actions.clear();
            model.actions(&s, &mut actions);
            succ.clear();
            for &a in &actions {
                if let Some(p) = model.crash_participation(&s, a) {
                    *ex.crash_hist.entry(p).or_default() += 1;
                }
                let mut t = s.clone();
                model.apply(&mut t, a)?;
                key.clear();
                model.encode(&t, &mut key);
                let (tid, fresh) = ex.store.intern(&key);
                if fresh {
                    if ex.store.len() > state_cap {
                        ex.truncated = true;
                        return Ok(ex);
                    }
                    ex.graph.add_node();
                    ex.goal.push(false);
                    stack.push((tid, t));
                }
                succ.push(tid);
            }
            ex.graph.set_successors(id, &succ);
        }
        Ok(ex)
    }

    /// BFS tree from the initial state.
    fn bfs_parents(&self) -> Vec<u32> {
        let n = self.graph.node_count();
        let mut parent = vec![u32::MAX; n];
        parent[0] = 0;
        let mut q = VecDeque::from([0u32]);
        while let Some(v) = q.pop_front() {
            for &w in self.graph.successors(v) {
                if parent[w as usize] == u32::MAX {
                    parent[w as usize] = v;
                    q.push_back(w);
                }
            }
        }
        parent
    }

    fn lookup(&self, s: &M::State, buf: &mut Vec<u8>) -> Option<u32> {
        buf.clear();
        self.model.encode(s, buf);
        self.store.find(buf)
    }

    /// Finds the action leading from `s` to node `target`, applying it to `s`.
    fn step_towards(&self, s: &mut M::State, target: u32, buf: &mut Vec<u8>) -> Result<M::Action, Fault> {
        let mut actions = Vec::new();
        self.model.actions(s, &mut actions);
        for a in actions {
            let mut t = s.clone();
            self.model.apply(&mut t, a)?;
            if self.lookup(&t, buf) == Some(target) {
                *s = t;
                return Ok(a);
            }
        }
        Err(Fault::Contract("explored edge not reproducible"))
    }

    /// Labeled schedule from the initial state to `target`, and the state reached.
    fn path_to(&self, parent: &[u32], target: u32) -> Result<(Vec<M::Action>, M::State), Fault> {
        let mut nodes = vec![target];
        let mut v = target;
        while v != 0 {
            v = parent[v as usize];
            nodes.push(v);
        }
        nodes.reverse();
        let mut s = self.model.initial();
        let mut buf = Vec::new();
        let mut schedule = Vec::with_capacity(nodes.len());
        for &next in &nodes[1..] {
            schedule.push(self.step_towards(&mut s, next, &mut buf)?);
        }
        Ok((schedule, s))
    }

    /// A cycle from `start` through every edge (or at least every state) of its
    /// bottom SCC, back to `start`.
    fn fair_cycle(&self, start: &M::State, start_id: u32) -> Result<(Vec<M::Action>, usize), Fault> {
        let mut buf = Vec::new();
        let mut states: HashMap<u32, M::State> = HashMap::new();
        let mut edges: Vec<(u32, M::Action, u32)> = Vec::new();
        let mut order = vec![start_id];
        states.insert(start_id, start.clone());
        let mut i = 0;
        let mut actions = Vec::new();
        while i < order.len() {
            let u = order[i];
            i += 1;
            let s = states[&u].clone();
            actions.clear();
            self.model.actions(&s, &mut actions);
            for &a in &actions {
                let mut t = s.clone();
                self.model.apply(&mut t, a)?;
                let v = self.lookup(&t, &mut buf).ok_or(Fault::Contract("SCC state missing"))?;
                edges.push((u, a, v));
                if let std::collections::hash_map::Entry::Vacant(e) = states.entry(v) {
                    e.insert(t);
                    order.push(v);
                }
            }
        }
        let adj = |u: u32| edges.iter().filter(move |e| e.0 == u);
        let path = |from: u32, to: u32| -> Vec<(M::Action, u32)> {
            if from == to {
                return Vec::new();
            }
            let mut prev: HashMap<u32, (u32, M::Action)> = HashMap::new();
            let mut q = VecDeque::from([from]);
            while let Some(u) = q.pop_front() {
                for &(_, a, v) in adj(u) {
                    if v != from && !prev.contains_key(&v) {
                        prev.insert(v, (u, a));
                        if v == to {
                            let mut out = Vec::new();
                            let mut cur = to;
                            while cur != from {
                                let (p, a) = prev[&cur];
                                out.push((a, cur));
                                cur = p;
                            }
                            out.reverse();
                            return out;
                        }
                        q.push_back(v);
                    }
                }
            }
            Vec::new()
        };
        let mut cycle = Vec::new();
        let mut cur = start_id;
        if edges.len() <= EDGE_COVER_LIMIT {
            for &(u, a, v) in &edges {
                cycle.extend(path(cur, u).into_iter().map(|x| x.0));
                cycle.push(a);
                cur = v;
            }
        } else {
            for &u in &order[1..] {
                cycle.extend(path(cur, u).into_iter().map(|x| x.0));
                cur = u;
            }
        }
        cycle.extend(path(cur, start_id).into_iter().map(|x| x.0));
        Ok((cycle, order.len()))
    }

    fn report(self) -> Result<ExplorationReport<M::Action>, Fault> {
        let transitions = self.graph.edge_count();
        let states = self.store.len().min(self.graph.node_count());
        if self.truncated {
            return Ok(ExplorationReport {
                states,
                transitions,
                truncated: true,
                terminal_states: 0,
                bottom_sccs: 0,
                violation_count: self.violation_count,
                safety_violations: Vec::new(),
                liveness: Liveness::NotChecked,
                crash_edges_by_participation: self.crash_hist,
            });
        }
        let parent = self.bfs_parents();
        let mut safety_violations = Vec::new();
        for &(id, property, ref detail) in &self.violations {
            let (schedule, _) = self.path_to(&parent, id)?;
            safety_violations.push(SafetyViolation {
                digest: fnv1a(self.store.key(id)),
                property,
                detail: detail.clone(),
                schedule,
            });
        }

        let terminal_states = (0..states as u32)
            .filter(|&v| self.graph.successors(v).is_empty())
            .count();
        let (comp, count) = tarjan(&self.graph);
        let bottom = bottom_components(&self.graph, &comp, count);
        let bottom_sccs = bottom.iter().filter(|&&b| b).count();
        // Per bad component, its representative: the member closest to the initial state.
        let mut depth = vec![u32::MAX; states];
        depth[0] = 0;
        let mut bfs_order = Vec::with_capacity(states);
        bfs_order.push(0u32);
        let mut i = 0;
        while i < bfs_order.len() {
            let v = bfs_order[i];
            i += 1;
            for &w in self.graph.successors(v) {
                if depth[w as usize] == u32::MAX {
                    depth[w as usize] = depth[v as usize] + 1;
                    bfs_order.push(w);
                }
            }
        }
        let mut bad_rep: BTreeMap<u32, u32> = BTreeMap::new();
        for &v in &bfs_order {
            let c = comp[v as usize];
            if bottom[c as usize] && !self.goal[v as usize] {
                bad_rep.entry(c).or_insert(v);
            }
        }
        let liveness = if bad_rep.is_empty() {
            Liveness::Pass
        } else {
            let mut reps: Vec<u32> = bad_rep.values().copied().collect();
            reps.sort_by_key(|&v| (depth[v as usize], v));
            let mut witnesses = Vec::new();
            for &v in reps.iter().take(KEPT_WITNESSES) {
                let (prefix, s) = self.path_to(&parent, v)?;
                let (cycle, scc_size) = self.fair_cycle(&s, v)?;
                let pending = self
                    .model
                    .pending_process(&s)
                    .ok_or(Fault::Contract("bad SCC without a pending process"))?;
                witnesses.push(LivenessWitness {
                    digest: fnv1a(self.store.key(v)),
                    scc_size,
                    pending,
                    prefix,
                    cycle,
                });
            }
            Liveness::Fail {
                bad_sccs: bad_rep.len(),
                witnesses,
            }
        };
        Ok(ExplorationReport {
            states,
            transitions,
            truncated: false,
            terminal_states,
            bottom_sccs,
            violation_count: self.violation_count,
            safety_violations,
            liveness,
            crash_edges_by_participation: self.crash_hist,
        })
    }
}

/// Explores `model` up to `state_cap` distinct states.
pub fn explore_model<M: Model>(model: &M, state_cap: usize) -> Result<ExplorationReport<M::Action>, Fault> {
    Exploration::run(model, state_cap)?.report()
}
