use std::collections::HashSet;

use lakekit::catalog::BranchClass;
use lakekit::model::*;
use lakekit::Error;
use rand::rngs::StdRng;
use rand::SeedableRng;

const POLICIES: [ModelPolicy; 3] = [ModelPolicy::GuardrailOn, ModelPolicy::GuardrailOff, ModelPolicy::Open];

fn actions(script: &str) -> Vec<Action> {
    script.lines().map(|l| l.trim().parse().unwrap()).collect()
}

#[test]
fn unit_bounds_leave_only_the_initial_state() {
    // one commit and one branch: nothing fits besides the root and main
    let e = enumerate(&Bounds::new(1, 1, 1, 1, 1, 1), ModelPolicy::GuardrailOff).unwrap();
    assert_eq!(e.states, 1);
    assert_eq!(e.per_depth, vec![1]);
}

#[test]
fn single_step_from_init_is_hand_countable() {
    // create-table main t0, create-branch b1 main, begin r1 main
    for p in POLICIES {
        let e = enumerate(&Bounds::new(1, 1, 2, 2, 1, 1), p).unwrap();
        assert_eq!(e.states, 4);
        assert_eq!(e.per_depth, vec![1, 3]);
    }
}

#[test]
fn enumeration_is_deterministic() {
    let b = Bounds::new(2, 3, 5, 3, 2, 6);
    for p in POLICIES {
        assert_eq!(enumerate(&b, p).unwrap(), enumerate(&b, p).unwrap());
    }
}

#[test]
fn stricter_policies_reach_subsets() {
    for b in [Bounds::new(2, 2, 4, 3, 1, 6), Bounds::new(2, 3, 5, 3, 2, 7)] {
        let on = reachable_states(&b, ModelPolicy::GuardrailOn).unwrap();
        let off = reachable_states(&b, ModelPolicy::GuardrailOff).unwrap();
        let open = reachable_states(&b, ModelPolicy::Open).unwrap();
        assert!(on.is_subset(&off));
        assert!(off.is_subset(&open));
        assert!(on.len() < off.len());
    }
}

#[test]
fn state_cap_is_enforced() {
    let b = Bounds::new(2, 3, 5, 3, 2, 7);
    assert!(matches!(
        enumerate_with_cap(&b, ModelPolicy::GuardrailOn, 50),
        Err(Error::BoundsTooLarge { cap: 50 })
    ));
}

#[test]
fn bounds_parse_and_validate() {
    let b: Bounds = "tables=3 snapshots=3 commits=6 branches=4 runs=2 steps=10"
        .parse()
        .unwrap();
    assert_eq!(b, Bounds::new(3, 3, 6, 4, 2, 10));
    assert_eq!(b.to_string().parse::<Bounds>().unwrap(), b);
    assert!(matches!(
        "tables=0,snapshots=1,commits=1,branches=1,runs=1,steps=1".parse::<Bounds>(),
        Err(Error::InvalidBounds(_))
    ));
    assert!(matches!("tables=2".parse::<Bounds>(), Err(Error::InvalidBounds(_))));
    assert!(matches!(
        enumerate(&Bounds::new(1, 1, 0, 1, 1, 1), ModelPolicy::Open),
        Err(Error::InvalidBounds(_))
    ));
}

#[test]
fn unknown_invariant_is_rejected() {
    assert!(matches!(
        "atomicity".parse::<Invariant>(),
        Err(Error::UnknownInvariant(_))
    ));
    for inv in Invariant::ALL {
        assert_eq!(inv.as_str().parse::<Invariant>().unwrap(), inv);
    }
}

#[test]
fn merge_atomicity_holds_everywhere() {
    for p in POLICIES {
        assert!(check(Invariant::MergeAtomicity, &Bounds::new(2, 3, 6, 3, 2, 8), p)
            .unwrap()
            .is_ok());
    }
}

#[test]
fn guardrail_closes_the_leak() {
    let b = Bounds::new(2, 3, 6, 4, 2, 8);
    for inv in Invariant::ALL {
        assert!(check(inv, &b, ModelPolicy::GuardrailOn).unwrap().is_ok(), "{inv}");
    }
}

#[test]
fn dangling_branch_counterexample_is_minimal_and_replays() {
    let b = Bounds::new(3, 3, 6, 4, 2, 8);
    let out = check(Invariant::NoAbortedLeak, &b, ModelPolicy::GuardrailOff).unwrap();
    let trace = out.trace().expect("counterexample");
    assert_eq!(
        trace.actions(),
        actions("begin r1 main\nstep r1\nfail r1\ncreate-branch b1 txn/r1\nmerge b1 main")
    );
    // nothing shorter exists
    let shorter = Bounds {
        max_steps: trace.len() - 1,
        ..b
    };
    assert!(check(Invariant::NoAbortedLeak, &shorter, ModelPolicy::GuardrailOff)
        .unwrap()
        .is_ok());

    let report = replay_fresh(trace).unwrap();
    let main = &report.branches["main"];
    let txn = report.branches.keys().find(|k| k.starts_with("txn/")).unwrap();
    assert_eq!(report.classes[txn], BranchClass::Aborted);
    // main carries the first output of a failed run and nothing else
    assert_eq!(main.keys().collect::<Vec<_>>(), vec!["t0"]);
    assert_eq!(main, &report.branches[txn]);
}

#[test]
fn open_policy_leaks_without_a_detour() {
    let out = check(
        Invariant::NoAbortedLeak,
        &Bounds::new(2, 2, 4, 3, 1, 6),
        ModelPolicy::Open,
    )
    .unwrap();
    assert_eq!(
        out.trace().unwrap().actions(),
        actions("begin r1 main\nstep r1\nfail r1\nmerge txn/r1 main")
    );
    replay_fresh(out.trace().unwrap()).unwrap();
}

#[test]
fn partial_publication_found_without_guardrail() {
    let out = check(
        Invariant::PipelineAtomicity,
        &Bounds::new(2, 3, 6, 3, 1, 6),
        ModelPolicy::GuardrailOff,
    )
    .unwrap();
    let CheckOutcome::Counterexample { violation, trace } = out else {
        panic!("expected a counterexample")
    };
    assert!(violation.contains("b1"), "{violation}");
    assert_eq!(trace.len(), 4);
    replay_fresh(&trace).unwrap();
}

#[test]
fn happy_path_publishes_every_table() {
    let b = Bounds::new(3, 3, 4, 2, 1, 5);
    let t = Trace::from_actions(
        b,
        ModelPolicy::GuardrailOn,
        &actions("begin r1 main\nstep r1\nstep r1\nstep r1\nfinish r1"),
    )
    .unwrap();
    let report = replay_fresh(&t).unwrap();
    assert_eq!(report.branches.len(), 1);
    assert_eq!(
        report.branches["main"].keys().collect::<Vec<_>>(),
        vec!["t0", "t1", "t2"]
    );
    assert_eq!(report.run_ids.len(), 1);
}

#[test]
fn empty_trace_replays_to_init() {
    let report = replay_fresh(&Trace::empty(Bounds::new(1, 1, 1, 1, 1, 1), ModelPolicy::GuardrailOn)).unwrap();
    assert_eq!(report.steps, 0);
    assert_eq!(report.branches.len(), 1);
    assert!(report.branches["main"].is_empty());
}

#[test]
fn finish_conflict_aborts_the_run() {
    let script = "begin r1 main\nstep r1\ncreate-table main t0\nfinish r1";
    let t = Trace::from_actions(
        Bounds::new(1, 2, 4, 2, 1, 4),
        ModelPolicy::GuardrailOn,
        &actions(script),
    )
    .unwrap();
    let last = t.final_state();
    assert_eq!(last.runs[0].status, ModelRunStatus::Failed);
    assert_eq!(last.branch(BranchName::Txn(0)).unwrap().class, BranchClass::Aborted);
    let report = replay_fresh(&t).unwrap();
    assert_eq!(
        report.classes.values().filter(|c| **c == BranchClass::Aborted).count(),
        1
    );
}

#[test]
fn disabled_actions_are_refused() {
    let b = Bounds::new(2, 2, 4, 3, 1, 6);
    let err = Trace::from_actions(
        b,
        ModelPolicy::GuardrailOn,
        &actions("begin r1 main\nstep r1\nfail r1\ncreate-branch b1 txn/r1"),
    );
    assert!(matches!(err, Err(Error::ActionNotEnabled { step: 4, .. })));
    // create-only: t0 already exists on the branch
    let err = Trace::from_actions(
        b,
        ModelPolicy::Open,
        &actions("create-table main t0\ncreate-table main t0"),
    );
    assert!(matches!(err, Err(Error::ActionNotEnabled { step: 2, .. })));
    // a running run's branch is private
    let err = Trace::from_actions(b, ModelPolicy::Open, &actions("begin r1 main\nmerge txn/r1 main"));
    assert!(matches!(err, Err(Error::ActionNotEnabled { step: 2, .. })));
}

#[test]
fn scripts_round_trip() {
    let mut rng = StdRng::seed_from_u64(11);
    let b = Bounds::new(2, 4, 7, 4, 2, 12);
    for p in POLICIES {
        for _ in 0..50 {
            let t = random_trace(&b, p, 12, &mut rng).unwrap();
            let back = Trace::parse_script(&format!("# generated\n{}", t.to_script())).unwrap();
            assert_eq!(back.actions(), t.actions());
            assert_eq!(back.bounds, t.bounds);
            assert_eq!(back.policy, t.policy);
        }
    }
}

#[test]
fn script_errors_carry_line_numbers() {
    assert!(matches!(
        Trace::parse_script("step r1\n"),
        Err(Error::TraceParse { line: 1, .. })
    ));
    let text = "bounds tables=1 snapshots=1 commits=2 branches=2 runs=1 steps=2\npolicy on\n\njump r1\n";
    assert!(matches!(
        Trace::parse_script(text),
        Err(Error::TraceParse { line: 4, .. })
    ));
    assert!(matches!(
        Trace::parse_script("policy maybe\n"),
        Err(Error::TraceParse { line: 1, .. })
    ));
    assert!(matches!(
        Trace::parse_script("policy on\n"),
        Err(Error::TraceParse { .. })
    ));
}

#[test]
fn random_traces_replay_without_divergence() {
    let mut rng = StdRng::seed_from_u64(2024);
    let bounds = [
        Bounds::new(2, 4, 7, 4, 2, 12),
        Bounds::new(3, 5, 8, 4, 3, 14),
        Bounds::new(1, 3, 6, 3, 3, 10),
    ];
    let mut seen = HashSet::new();
    for i in 0..1000 {
        let b = bounds[i % bounds.len()];
        let p = POLICIES[i % POLICIES.len()];
        let t = random_trace(&b, p, b.max_steps, &mut rng).unwrap();
        seen.extend(
            t.actions()
                .iter()
                .map(|a| a.to_string().split(' ').next().unwrap().to_string()),
        );
        if let Err(e) = replay_fresh(&t) {
            panic!("trace {i} diverged: {e}\n{}", t.to_script());
        }
    }
    for kind in [
        "create-table",
        "create-branch",
        "begin",
        "step",
        "fail",
        "finish",
        "merge",
    ] {
        assert!(seen.contains(kind), "no {kind} sampled");
    }
}

#[test]
fn rendering_shows_classes_and_runs() {
    let t = Trace::from_actions(
        Bounds::new(2, 2, 4, 3, 1, 5),
        ModelPolicy::GuardrailOff,
        &actions("begin r1 main\nstep r1\nfail r1"),
    )
    .unwrap();
    let text = render_trace(&t);
    assert!(text.contains("txn/r1 [aborted]"), "{text}");
    assert!(text.contains("run r1 on main: failed after 1 step(s)"), "{text}");
    assert!(text.contains("  3. fail r1"), "{text}");
}
