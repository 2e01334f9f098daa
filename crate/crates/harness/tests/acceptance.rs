//! The release gate: every numbered claim the project makes about the
//! protocol, checked end to end at desk scale. One PASS/FAIL line per
//! criterion (visible under `--nocapture`; failures carry the same
//! detail in the panic message).
//!
//! Criteria 1-3 share one run grid: n in {4, 7, 10}, every built-in
//! adversary strategy, 100 seeds each, 2 instances per run.

use cmvba_core::crypto::{cs_tag, vcbc_tag, CryptoKit, SigShare};
use cmvba_core::explore::{run_schedule, ExploreSetup, PrefixChooser};
use cmvba_core::pvcbc::VcbcReceiver;
use cmvba_core::sim::{
    parse_trace, replay_check, run_simulation, strategy_by_name, RunReport, TraceMode,
    BUILTIN_NAMES,
};
use cmvba_core::{ProtocolOptions, SysConfig};
use cmvba_harness::{derive_master, fit_decay, miss_curve, run_experiment, ExperimentSpec, System};
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::sync::OnceLock;

const GRID_NS: [usize; 3] = [4, 7, 10];
const GRID_SEEDS: u64 = 100;
const GRID_INSTANCES: u64 = 2;

struct GridRun {
    strategy: &'static str,
    cfg: SysConfig,
    honest: usize,
    report: RunReport,
}

static GRID: OnceLock<Vec<GridRun>> = OnceLock::new();

fn grid() -> &'static [GridRun] {
    GRID.get_or_init(|| {
        let mut jobs = Vec::new();
        for &n in &GRID_NS {
            for &strategy in BUILTIN_NAMES {
                for seed in 0..GRID_SEEDS {
                    jobs.push((n, strategy, seed));
                }
            }
        }
        jobs.par_iter()
            .map(|&(n, strategy, seed)| {
                let f = (n - 1) / 3;
                let cfg = SysConfig::new(n, f, 32, 32, derive_master(0, seed)).expect("valid");
                let strat = strategy_by_name(&cfg, strategy).expect("built-in");
                let honest = n - strat.byzantine.len();
                let report = run_simulation(&cfg, &strat, seed, GRID_INSTANCES, TraceMode::Hash)
                    .unwrap_or_else(|e| panic!("{strategy}/n={n}/seed={seed}: {e}"));
                GridRun { strategy, cfg, honest, report }
            })
            .collect()
    })
}

fn conclude(num: u32, name: &str, failures: &[String], detail: String) {
    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {num} {name}: {status} ({detail})");
    assert!(
        failures.is_empty(),
        "criterion {num} {name}: {} failure(s), first: {}",
        failures.len(),
        failures[0]
    );
}

#[test]
fn criterion_1_agreement_and_external_validity() {
    let mut failures = Vec::new();
    let mut instances = 0usize;
    for run in grid() {
        let label = format!("{}/n={}/seed={}", run.strategy, run.cfg.n, run.report.seed);
        let kit = CryptoKit::new(&run.cfg);
        if run.report.decisions.len() != run.honest {
            failures.push(format!("{label}: {} deciders, expected {}", run.report.decisions.len(), run.honest));
            continue;
        }
        let mut reference: Option<Vec<_>> = None;
        for (party, decisions) in &run.report.decisions {
            if decisions.len() != GRID_INSTANCES as usize {
                failures.push(format!("{label}: party {party} decided {} instances", decisions.len()));
                continue;
            }
            let key: Vec<_> = decisions
                .iter()
                .map(|d| (d.instance, d.candidate, d.payload.clone()))
                .collect();
            match &reference {
                None => {
                    for d in decisions {
                        instances += 1;
                        let tag = vcbc_tag(d.instance, d.candidate);
                        let digest = kit.proposal_digest(&tag, &d.payload);
                        if d.proof.tag != tag
                            || d.proof.digest != digest
                            || !kit.proof_self_verify(&d.proof)
                        {
                            failures.push(format!(
                                "{label}: instance {} proof fails verification",
                                d.instance
                            ));
                        }
                    }
                    reference = Some(key);
                }
                Some(r) if *r != key => {
                    failures.push(format!("{label}: party {party} disagrees"));
                }
                Some(_) => {}
            }
        }
    }
    conclude(
        1,
        "agreement-and-external-validity",
        &failures,
        format!("{} runs, {instances} decided instances verified", grid().len()),
    );
}

#[test]
fn criterion_2_spread_reaches_a_quorum() {
    let mut failures = Vec::new();
    let mut audits = 0usize;
    for run in grid() {
        for audit in &run.report.audits {
            audits += 1;
            if audit.max_holders_at_spread_done < run.cfg.high_threshold() {
                failures.push(format!(
                    "{}/n={}/seed={}/instance={}: best proposal held by {}, need {}",
                    run.strategy,
                    run.cfg.n,
                    run.report.seed,
                    audit.instance,
                    audit.max_holders_at_spread_done,
                    run.cfg.high_threshold()
                ));
            }
        }
    }
    conclude(2, "spread-reaches-quorum", &failures, format!("{audits} instances, 100% required"));
}

#[test]
fn criterion_3_iteration_bound_and_tally() {
    let mut failures = Vec::new();
    let mut audits = 0usize;
    for run in grid() {
        let (n, f) = (run.cfg.n, run.cfg.f);
        for audit in &run.report.audits {
            audits += 1;
            let label = format!(
                "{}/n={n}/seed={}/instance={}",
                run.strategy, run.report.seed, audit.instance
            );
            let r = audit.iterations;
            if r > (f + 1) as u64 {
                failures.push(format!("{label}: {r} iterations, bound {}", f + 1));
            }
            // Each settled-to-zero position starved f + 1 honest
            // parties, and the f corrupt parties can starve at most
            // f * (n - f) party-slots in total.
            if (r - 1) * (f + 1) as u64 > (f * (n - f)) as u64 {
                failures.push(format!(
                    "{label}: {} zero positions exceed starvation budget {}",
                    r - 1,
                    f * (n - f)
                ));
            }
        }
    }
    conclude(3, "iteration-bound-and-tally", &failures, format!("{audits} instances"));
}

#[test]
fn criterion_4_constant_expected_iterations() {
    let mut failures = Vec::new();

    let honest_rows: Vec<u64> = grid()
        .iter()
        .filter(|r| r.strategy == "honest_random")
        .flat_map(|r| r.report.audits.iter().map(|a| a.iterations))
        .collect();
    let mean_r = honest_rows.iter().sum::<u64>() as f64 / honest_rows.len() as f64;
    if mean_r > 1.2 {
        failures.push(format!("honest mean iterations {mean_r:.3} above 1.2"));
    }

    // One spreadable proposal at f = 3: its position in the order is
    // uniform over the f + 1 committee slots, so the mean first hit is
    // (f + 2) / 2 = 2.5 and the miss chance shrinks with every
    // further position.
    let f = 3;
    let n = 10;
    let hits: Vec<u64> = (0..500u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = SysConfig::new(n, f, 32, 32, derive_master(0, seed)).expect("valid");
            let strat = strategy_by_name(&cfg, "worst_order").expect("built-in");
            let report = run_simulation(&cfg, &strat, seed, 1, TraceMode::Hash)
                .unwrap_or_else(|e| panic!("worst_order seed {seed}: {e}"));
            let audit = &report.audits[0];
            assert_eq!(audit.good_set.len(), 1, "worst_order leaves one covered candidate");
            audit.first_hit.expect("covered set is nonempty")
        })
        .collect();
    let mean_hit = hits.iter().sum::<u64>() as f64 / hits.len() as f64;
    if (mean_hit - 2.5).abs() > 0.3 {
        failures.push(format!("mean first hit {mean_hit:.3} outside 2.5 +- 0.3"));
    }
    let curve = miss_curve(&hits, (f + 1) as u64);
    for t in 1..curve.len() {
        if curve[t - 1] > 0.0 && curve[t] >= curve[t - 1] {
            failures.push(format!("miss table not decreasing at t={t}: {curve:?}"));
        }
    }
    let beta = fit_decay(&hits);
    conclude(
        4,
        "constant-expected-iterations",
        &failures,
        format!(
            "honest mean R {mean_r:.3}, worst-order mean hit {mean_hit:.3} over 500 seeds, miss {:?}, decay base {:?}",
            curve.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            beta.map(|b| (b * 100.0).round() / 100.0),
        ),
    );
}

#[test]
fn criterion_5_quadratic_scaling() {
    let spec = ExperimentSpec {
        name: "scaling".into(),
        strategies: BUILTIN_NAMES.iter().map(|s| s.to_string()).collect(),
        systems: vec![
            System { n: 4, f: 1 },
            System { n: 7, f: 2 },
            System { n: 10, f: 3 },
            System { n: 13, f: 4 },
        ],
        payload_lens: vec![32, 1024],
        lambda: 32,
        seeds: 25,
        instances: 1,
        base_seed: 0,
    };
    let result = run_experiment(&spec).unwrap_or_else(|e| panic!("grid failed:\n{e}"));
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for strategy in BUILTIN_NAMES {
        let msg: Vec<(String, f64)> = result
            .cells
            .iter()
            .filter(|c| c.strategy == *strategy && c.payload_len == 32)
            .map(|c| (format!("n={}", c.n), c.msg_ratio))
            .collect();
        match cmvba_harness::check_scaling(&msg, 0.35) {
            Ok(d) => worst = worst.max(parse_deviation(&d)),
            Err(e) => failures.push(format!("{strategy} messages: {e}")),
        }
        for l in [32usize, 1024] {
            let bits: Vec<(String, f64)> = result
                .cells
                .iter()
                .filter(|c| c.strategy == *strategy && c.payload_len == l)
                .map(|c| (format!("n={}", c.n), c.bit_ratio))
                .collect();
            match cmvba_harness::check_scaling(&bits, 0.35) {
                Ok(d) => worst = worst.max(parse_deviation(&d)),
                Err(e) => failures.push(format!("{strategy} bytes l={l}: {e}")),
            }
        }
    }
    // Causal depth must stay flat as the system grows when nobody
    // interferes: the runtime claim at desk scale.
    let depth = |n: usize| {
        result
            .cells
            .iter()
            .find(|c| c.strategy == "honest_random" && c.n == n && c.payload_len == 32)
            .map(|c| c.mean_causal_depth)
            .expect("cell present")
    };
    let depth_ratio = depth(13) / depth(4);
    if depth_ratio > 1.5 {
        failures.push(format!("honest causal depth grows: ratio {depth_ratio:.2}"));
    }
    conclude(
        5,
        "quadratic-scaling",
        &failures,
        format!(
            "7 strategies x 4 sizes x 2 payloads, worst deviation {:.1}% of +-35%, depth ratio {depth_ratio:.2}",
            worst * 100.0
        ),
    );
}

fn parse_deviation(detail: &str) -> f64 {
    detail
        .strip_prefix("worst deviation ")
        .and_then(|s| s.split('%').next())
        .and_then(|s| s.parse::<f64>().ok())
        .map(|p| p / 100.0)
        .unwrap_or(0.0)
}

#[test]
fn criterion_6_binary_agreement_suite() {
    let mut failures = Vec::new();
    let cfg = || SysConfig::new(4, 1, 16, 32, [9u8; 32]).expect("valid");

    // Unanimity, exact: both input patterns, 50 schedules each, honest
    // parties only.
    let mut unanimity = 0usize;
    for value in [false, true] {
        for seed in 0..50u64 {
            let s = ExploreSetup {
                cfg: cfg(),
                instance: 1,
                candidate: 0,
                honest_inputs: vec![value; 4],
                byz: vec![],
                menu_rounds: 0,
            };
            let mut chooser = PrefixChooser::new(seed, 4, 3, 1000 + seed);
            match run_schedule(&s, &mut chooser, 10_000) {
                Ok(out) if out.agreed_value() == value => unanimity += 1,
                Ok(out) => failures.push(format!(
                    "unanimity {value} seed {seed}: decided {}",
                    out.agreed_value()
                )),
                Err(e) => failures.push(format!("unanimity {value} seed {seed}: {e}")),
            }
        }
    }

    // Agreement under injection: every honest input combination, every
    // scheduling prefix of depth 7 over base 4, scripted fourth party.
    let prefixes = 4u64.pow(7);
    let schedule_failures: Vec<String> = (0..8u8)
        .flat_map(|bits| {
            let inputs: Vec<bool> = (0..3).map(|i| bits >> i & 1 == 1).collect();
            (0..prefixes)
                .into_par_iter()
                .filter_map(|prefix| {
                    let s = ExploreSetup {
                        cfg: cfg(),
                        instance: 1,
                        candidate: 0,
                        honest_inputs: inputs.clone(),
                        byz: vec![3],
                        menu_rounds: 4,
                    };
                    let mut chooser = PrefixChooser::new(prefix, 4, 7, 271);
                    run_schedule(&s, &mut chooser, 20_000)
                        .err()
                        .map(|e| format!("inputs {inputs:?} prefix {prefix}: {e}"))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let schedules = 8 * prefixes;
    failures.extend(schedule_failures.iter().take(3).cloned());

    // Split-input termination tail over seeded schedules.
    let rounds: Vec<u64> = (0..500u64)
        .into_par_iter()
        .map(|seed| {
            let s = ExploreSetup {
                cfg: cfg(),
                instance: 1,
                candidate: 0,
                honest_inputs: vec![true, false, true],
                byz: vec![3],
                menu_rounds: 4,
            };
            let mut chooser = PrefixChooser::new(seed, 8, 4, 9000 + seed);
            match run_schedule(&s, &mut chooser, 20_000) {
                Ok(out) => out.max_round(),
                Err(e) => panic!("split seed {seed}: {e}"),
            }
        })
        .collect();
    let quick = rounds.iter().filter(|&&r| r <= 20).count();
    let quick_rate = quick as f64 / rounds.len() as f64;
    if quick_rate < 0.99 {
        failures.push(format!("only {:.1}% settled within 20 rounds", quick_rate * 100.0));
    }

    conclude(
        6,
        "binary-agreement-suite",
        &failures,
        format!(
            "{unanimity}/100 unanimity runs exact, {schedules} injected schedules ({} violations), {:.1}% of splits within 20 rounds (worst {})",
            schedule_failures.len(),
            quick_rate * 100.0,
            rounds.iter().max().unwrap()
        ),
    );
}

#[test]
fn criterion_7_broadcast_consistency() {
    // All 27 assignments of which payload each honest receiver is shown
    // first by an equivocating committee member at n = 4; no assignment
    // may let both payloads reach verifying proofs.
    let cfg = SysConfig::new(4, 1, 16, 32, [13u8; 32]).expect("valid");
    let kit = CryptoKit::new(&cfg);
    let keys = CryptoKit::keygen(&cfg);
    let proposer = 3usize;
    let tag = vcbc_tag(1, proposer);
    let payload_a = b"first version".as_slice();
    let payload_b = b"second version".as_slice();
    let digest_a = kit.proposal_digest(&tag, payload_a);
    let digest_b = kit.proposal_digest(&tag, payload_b);

    let mut failures = Vec::new();
    let mut checked = 0usize;
    for assignment in 0..27u32 {
        let mut echoes_a: Vec<SigShare> = vec![keys[proposer].sig_share(&tag, &digest_a)];
        let mut echoes_b: Vec<SigShare> = vec![keys[proposer].sig_share(&tag, &digest_b)];
        for (slot, &p) in [0usize, 1, 2].iter().enumerate() {
            let choice = assignment / 3u32.pow(slot as u32) % 3;
            let deliveries: &[&[u8]] = match choice {
                0 => &[payload_a, payload_b],
                1 => &[payload_b, payload_a],
                _ => &[],
            };
            let mut rx = VcbcReceiver::new(1);
            for payload in deliveries {
                if let Ok(Some(out)) = rx.on_send(&kit, &keys[p], proposer, payload) {
                    if let cmvba_core::messages::Message::VcbcEcho { share, .. } = out.msg {
                        if share.digest == digest_a {
                            echoes_a.push(share);
                        } else {
                            echoes_b.push(share);
                        }
                    }
                }
            }
        }
        let a_ok = kit
            .sig_combine(&tag, &digest_a, &echoes_a, cfg.high_threshold())
            .map(|p| kit.proof_verify(&tag, &digest_a, &p))
            .unwrap_or(false);
        let b_ok = kit
            .sig_combine(&tag, &digest_b, &echoes_b, cfg.high_threshold())
            .map(|p| kit.proof_verify(&tag, &digest_b, &p))
            .unwrap_or(false);
        if a_ok && b_ok {
            failures.push(format!("assignment {assignment} yielded two verifying proofs"));
        }
        checked += 1;
    }
    conclude(7, "broadcast-consistency", &failures, format!("{checked} first-receive assignments"));
}

#[test]
fn criterion_8_share_subset_independence() {
    // Any qualifying subset of issuers must reconstruct the same coin
    // value and the same combined proof as any other.
    let cfg = SysConfig::new(4, 1, 16, 32, [21u8; 32]).expect("valid");
    let kit = CryptoKit::new(&cfg);
    let keys = CryptoKit::keygen(&cfg);
    let coin_tag = cs_tag(5);
    let sig_tag = vcbc_tag(5, 2);
    let digest = kit.proposal_digest(&sig_tag, b"subset probe");
    let coin_shares: Vec<_> = keys.iter().map(|k| k.coin_share(&coin_tag)).collect();
    let sig_shares: Vec<_> = keys.iter().map(|k| k.sig_share(&sig_tag, &digest)).collect();

    let mut failures = Vec::new();
    let mut combos = 0usize;
    for threshold in [2usize, 3] {
        let mut coin_ref = None;
        let mut proof_ref = None;
        for mask in 0u32..16 {
            let members: Vec<usize> = (0..4).filter(|i| mask >> i & 1 == 1).collect();
            if members.len() < threshold {
                continue;
            }
            combos += 1;
            let cs: Vec<_> = members.iter().map(|&i| coin_shares[i].clone()).collect();
            let ss: Vec<_> = members.iter().map(|&i| sig_shares[i].clone()).collect();
            let seed = kit
                .coin_toss(&coin_tag, &cs, threshold)
                .unwrap_or_else(|e| panic!("coin subset {members:?}: {e}"));
            if !kit.coin_verify(&coin_tag, &seed) {
                failures.push(format!("coin from {members:?} fails verification"));
            }
            match &coin_ref {
                None => coin_ref = Some(seed),
                Some(r) if *r != seed => {
                    failures.push(format!("threshold {threshold}: subset {members:?} differs"));
                }
                Some(_) => {}
            }
            let proof = kit
                .sig_combine(&sig_tag, &digest, &ss, threshold)
                .unwrap_or_else(|e| panic!("proof subset {members:?}: {e}"));
            if !kit.proof_verify(&sig_tag, &digest, &proof) {
                failures.push(format!("proof from {members:?} fails verification"));
            }
            match &proof_ref {
                None => proof_ref = Some(proof),
                Some(r) if *r != proof => {
                    failures.push(format!("threshold {threshold}: proof subset {members:?} differs"));
                }
                Some(_) => {}
            }
        }
    }
    conclude(8, "share-subset-independence", &failures, format!("{combos} subsets, thresholds 2 and 3"));
}

#[test]
fn criterion_9_replay_determinism() {
    let checks: Vec<Result<(), String>> = (0..50u64)
        .into_par_iter()
        .map(|i| {
            let n = GRID_NS[(i % 3) as usize];
            let f = (n - 1) / 3;
            let strategy = BUILTIN_NAMES[(i % BUILTIN_NAMES.len() as u64) as usize];
            let label = format!("{strategy}/n={n}/seed={i}");
            let cfg = SysConfig::new(n, f, 32, 32, derive_master(7, i)).expect("valid");
            let strat = strategy_by_name(&cfg, strategy).expect("built-in");
            let report = run_simulation(&cfg, &strat, i, 1, TraceMode::Full)
                .map_err(|e| format!("{label}: {e}"))?;
            let text = report.trace.as_ref().expect("full mode").join("\n");
            let lines = parse_trace(&text).map_err(|e| format!("{label}: {e}"))?;
            let replayed = replay_check(&lines, &ProtocolOptions::default())
                .map_err(|e| format!("{label}: {e}"))?;
            if replayed.trace_hash != report.trace_hash {
                return Err(format!(
                    "{label}: hash changed {} -> {}",
                    report.trace_hash, replayed.trace_hash
                ));
            }
            Ok(())
        })
        .collect();
    let failures: Vec<String> = checks.into_iter().filter_map(Result::err).collect();
    conclude(9, "replay-determinism", &failures, "50 spot checks, hash-identical".into());
}

#[test]
fn grid_covers_every_strategy_and_size() {
    // Guard for the shared grid itself: criteria 1-3 only mean something
    // if the grid really spans the full roster.
    let seen: BTreeSet<(usize, &str)> =
        grid().iter().map(|r| (r.cfg.n, r.strategy)).collect();
    assert_eq!(seen.len(), GRID_NS.len() * BUILTIN_NAMES.len());
    assert_eq!(grid().len(), GRID_NS.len() * BUILTIN_NAMES.len() * GRID_SEEDS as usize);
}
