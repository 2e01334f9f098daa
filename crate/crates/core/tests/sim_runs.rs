//! End-to-end simulator runs across the builtin adversary roster.

use cmvba_core::sim::{
    predict_committee, run_simulation, strategy_by_name, TraceMode, BUILTIN_NAMES,
};
use cmvba_core::SysConfig;

fn cfg(n: usize, f: usize) -> SysConfig {
    SysConfig::new(n, f, 64, 32, [7u8; 32]).unwrap()
}

#[test]
fn every_builtin_strategy_completes_two_instances() {
    for &(n, f) in &[(4usize, 1usize), (7, 2)] {
        let c = cfg(n, f);
        for name in BUILTIN_NAMES {
            let strategy = strategy_by_name(&c, name).unwrap();
            for seed in 0..3 {
                let report = run_simulation(&c, &strategy, seed, 2, TraceMode::Hash)
                    .unwrap_or_else(|e| panic!("{name} n={n} seed={seed}: {e}"));
                assert_eq!(report.audits.len(), 2, "{name} n={n} seed={seed}");
                let honest = n - strategy.byzantine.len();
                assert_eq!(report.decisions.len(), honest);
                for decs in report.decisions.values() {
                    assert_eq!(decs.len(), 2);
                }
            }
        }
    }
}

#[test]
fn traces_are_reproducible_and_seed_sensitive() {
    let c = cfg(4, 1);
    for name in BUILTIN_NAMES {
        let strategy = strategy_by_name(&c, name).unwrap();
        let a = run_simulation(&c, &strategy, 5, 1, TraceMode::Full).unwrap();
        let b = run_simulation(&c, &strategy, 5, 1, TraceMode::Full).unwrap();
        let other = run_simulation(&c, &strategy, 6, 1, TraceMode::Hash).unwrap();
        assert_eq!(a.trace_hash, b.trace_hash, "{name}");
        assert_eq!(a.trace, b.trace, "{name}");
        assert_ne!(a.trace_hash, other.trace_hash, "{name}");
    }
}

#[test]
fn worst_order_decides_the_one_spreadable_proposal() {
    let c = cfg(10, 3);
    let strategy = strategy_by_name(&c, "worst_order").unwrap();
    let committee = predict_committee(&c, 1);
    let fast = *committee.iter().min().unwrap();
    for seed in 0..20 {
        let report = run_simulation(&c, &strategy, seed, 1, TraceMode::Hash).unwrap();
        let audit = &report.audits[0];
        assert_eq!(audit.decided_candidate, fast, "seed {seed}");
        assert_eq!(audit.good_set, vec![fast], "seed {seed}");
        let pos = audit.order.iter().position(|&p| p == fast).unwrap() as u64 + 1;
        assert_eq!(audit.first_hit, Some(pos), "seed {seed}");
        assert_eq!(audit.iterations, pos, "seed {seed}");
    }
}

#[test]
fn equivocating_proposer_never_gets_accepted() {
    let c = cfg(4, 1);
    let strategy = strategy_by_name(&c, "equivocator").unwrap();
    let splitter = *strategy.byzantine.iter().next().unwrap();
    for seed in 0..20 {
        let report = run_simulation(&c, &strategy, seed, 1, TraceMode::Hash).unwrap();
        let audit = &report.audits[0];
        // The split broadcast can never gather a quorum of echoes on
        // either payload, so the splitter's slot settles to zero.
        assert_ne!(audit.decided_candidate, splitter, "seed {seed}");
        if audit.committee.contains(&splitter) {
            assert!(audit.zero_decided.contains(&splitter), "seed {seed}");
        }
    }
}

#[test]
fn silent_committee_members_settle_to_zero() {
    let c = cfg(7, 2);
    let strategy = strategy_by_name(&c, "scenario1_silent_committee").unwrap();
    let report = run_simulation(&c, &strategy, 11, 1, TraceMode::Hash).unwrap();
    let audit = &report.audits[0];
    assert!(!strategy.byzantine.contains(&audit.decided_candidate));
    // Termination bound: the decision lands within the committee walk.
    assert!(audit.iterations <= (c.f + 1) as u64);
}

#[test]
fn full_trace_replays_to_the_same_hash() {
    use cmvba_core::sim::{parse_trace, replay_check};
    let c = cfg(4, 1);
    let strategy = strategy_by_name(&c, "scenario3_all_responsive").unwrap();
    let report = run_simulation(&c, &strategy, 9, 1, TraceMode::Full).unwrap();
    let text = report.trace.as_ref().unwrap().join("\n");
    let lines = parse_trace(&text).unwrap();
    let replayed = replay_check(&lines, &Default::default()).unwrap();
    assert_eq!(replayed.trace_hash, report.trace_hash);
}
