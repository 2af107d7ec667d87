use lambda_consensus::explorer::{
    explore, explore_object, find_tightness_witness, Liveness, ObjectUnderTest, Property, TightnessOutcome,
};
use lambda_consensus::runtime::{run_schedule, Config, ScheduledAction};
use lambda_consensus::verdict::{check_trace, Termination};
use lambda_consensus::Pid;

const CAP: usize = 1_000_000;

#[test]
fn failure_free_pair_decides_in_every_terminal_state() {
    let r = explore(&Config::new(2, 0, 0, vec![0, 1]), CAP).unwrap();
    assert!(r.passed());
    assert_eq!(r.terminal_states, r.bottom_sccs);
}

#[test]
fn crash_edges_respect_lambda() {
    let r = explore(&Config::new(2, 1, 1, vec![0, 1]), CAP).unwrap();
    assert!(r.passed());
    assert!(r.crash_edges_by_participation.keys().all(|&p| p <= 1));
    assert!(r.crash_edges_by_participation.contains_key(&1));

    let r = explore(&Config::new(2, 2, 2, vec![0, 1]), CAP).unwrap();
    assert!(r.passed());
    assert_eq!(r.crash_edges_by_participation.keys().copied().collect::<Vec<_>>(), [0]);
}

#[test]
fn exploration_is_deterministic() {
    let c = Config::new(3, 1, 1, vec![0, 1, 1]);
    let a = explore(&c, CAP).unwrap();
    let b = explore(&c, CAP).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn three_process_witness_replays_as_an_undecided_run() {
    let c = Config::new(3, 1, 2, vec![0, 0, 1]);
    let TightnessOutcome::Found { witness, safety_clean, .. } = find_tightness_witness(&c, CAP).unwrap() else {
        panic!("expected a witness");
    };
    assert!(safety_clean);
    assert!(witness.prefix.iter().filter(|a| a.is_crash()).count() <= 2);
    // Three laps round the cycle: still legal, still undecided.
    let mut schedule = witness.prefix.clone();
    for _ in 0..3 {
        schedule.extend_from_slice(&witness.cycle);
    }
    let trace = run_schedule(&c, &schedule).unwrap();
    let v = check_trace(&trace, &c).unwrap();
    assert!(!v.has_violation(), "{v:?}");
    let Termination::Inconclusive { undecided } = v.termination else {
        panic!("{v:?}")
    };
    assert!(undecided.contains(&witness.pending));
}

#[test]
fn liveness_failure_carries_witnesses() {
    let r = explore(&Config::new(2, 0, 1, vec![1, 1]), CAP).unwrap();
    let Liveness::Fail { bad_sccs, witnesses } = &r.liveness else {
        panic!("{:?}", r.liveness)
    };
    assert!(*bad_sccs >= 1 && !witnesses.is_empty());
    assert!(r.safety_clean());
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["liveness"]["status"], "fail");
    let cycle: Vec<ScheduledAction> = serde_json::from_value(json["liveness"]["witnesses"][0]["cycle"].clone()).unwrap();
    assert_eq!(cycle, witnesses[0].cycle);
}

#[test]
fn adopt_commit_examples() {
    for proposals in [vec![4, 4], vec![0, 1], vec![1, 0, 1]] {
        let r = explore_object(&ObjectUnderTest::AdoptCommit { proposals }, CAP).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn arm_partial_invokers() {
    let r = explore_object(&ObjectUnderTest::Arm { n: 3, invokers: vec![Pid(1), Pid(3)] }, CAP).unwrap();
    assert!(r.passed());
    let props: Vec<Property> = r.safety_violations.iter().map(|v| v.property).collect();
    assert!(props.is_empty());
}
