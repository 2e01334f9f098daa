//! Bounded-schedule exploration of the binary-agreement stage.
//!
//! Runs a set of agreement state machines in isolation, delivering every
//! pending envelope in whatever order a chooser dictates, with one
//! optional scripted party injecting every valid-looking vote and commit
//! it could ever produce. Each completed schedule is checked for
//! agreement and termination, so sweeping many choosers amounts to a
//! state-space search over adversarial network behavior.
//!
//! The chooser only ever picks *which* pending delivery happens next;
//! nothing is dropped. Withholding a message forever is equivalent to
//! delivering it after everyone has decided, which the sweep covers.

use crate::abba::{
    commit_statement, round_coin, verify_decide, vote_statement, AbbaState, CoinKind,
};
use crate::config::SysConfig;
use crate::crypto::{abba_tag, coin_tag, vcbc_tag, CryptoKit, Proof};
use crate::messages::{Message, VoteBasis};
use crate::{Instance, PartyId};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Picks the index of the next delivery out of `len` pending ones.
pub trait Chooser {
    fn pick(&mut self, len: usize) -> usize;
}

/// Systematic prefix, seeded tail: the first `depth` picks are the base-B
/// digits of `prefix_id`, everything after comes from a seeded stream.
/// Sweeping `prefix_id` over `0..base^depth` enumerates every branch of
/// the early (most consequential) scheduling decisions.
pub struct PrefixChooser {
    digits: Vec<u64>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl PrefixChooser {
    pub fn new(prefix_id: u64, base: u64, depth: usize, tail_seed: u64) -> Self {
        let mut digits = Vec::with_capacity(depth);
        let mut rest = prefix_id;
        for _ in 0..depth {
            digits.push(rest % base);
            rest /= base;
        }
        let mix = tail_seed ^ prefix_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        PrefixChooser { digits, pos: 0, rng: ChaCha8Rng::seed_from_u64(mix) }
    }
}

impl Chooser for PrefixChooser {
    fn pick(&mut self, len: usize) -> usize {
        debug_assert!(len > 0);
        let raw = if self.pos < self.digits.len() {
            let d = self.digits[self.pos];
            self.pos += 1;
            d
        } else {
            self.rng.next_u64()
        };
        (raw % len as u64) as usize
    }
}

/// One agreement run to explore.
pub struct ExploreSetup {
    pub cfg: SysConfig,
    pub instance: Instance,
    pub candidate: PartyId,
    /// Inputs for the honest parties, in ascending id order over the
    /// non-scripted ids.
    pub honest_inputs: Vec<bool>,
    /// Scripted parties. They inject everything forgeable without a
    /// quorum's cooperation: round-one votes for both values (the 1-vote
    /// with a genuine broadcast proof) and abstain commits with coin
    /// shares over the first rounds. Then they stay quiet.
    pub byz: Vec<PartyId>,
    /// How many rounds the scripted abstain commits cover.
    pub menu_rounds: u64,
}

#[derive(Debug)]
pub struct Outcome {
    /// (value, round) per honest party, ascending id order. Parties that
    /// adopted a transferred decision report the round the evidence names.
    pub decisions: Vec<(bool, u64)>,
    pub deliveries: usize,
}

impl Outcome {
    pub fn agreed_value(&self) -> bool {
        self.decisions[0].0
    }

    pub fn max_round(&self) -> u64 {
        self.decisions.iter().map(|d| d.1).max().unwrap_or(0)
    }
}

/// Build a genuine broadcast proof for `(instance, candidate)`, as the
/// justification carried by 1-votes.
pub fn mint_proof(cfg: &SysConfig, instance: Instance, candidate: PartyId) -> Proof {
    let kit = CryptoKit::new(cfg);
    let keys = CryptoKit::keygen(cfg);
    let tag = vcbc_tag(instance, candidate);
    let digest = kit.proposal_digest(&tag, b"explored payload");
    let shares: Vec<_> =
        keys.iter().take(cfg.high_threshold()).map(|k| k.sig_share(&tag, &digest)).collect();
    kit.sig_combine(&tag, &digest, &shares, cfg.high_threshold()).expect("threshold met")
}

/// Run one schedule to completion. Errors mean the protocol itself
/// misbehaved: an honest machine rejected honest traffic, emitted bad
/// evidence, or the run drained without every honest party deciding.
pub fn run_schedule(
    setup: &ExploreSetup,
    chooser: &mut dyn Chooser,
    max_deliveries: usize,
) -> Result<Outcome, String> {
    let cfg = &setup.cfg;
    let kit = CryptoKit::new(cfg);
    let keys = CryptoKit::keygen(cfg);
    let proof = mint_proof(cfg, setup.instance, setup.candidate);
    let honest_ids: Vec<PartyId> = (0..cfg.n).filter(|p| !setup.byz.contains(p)).collect();
    assert_eq!(honest_ids.len(), setup.honest_inputs.len(), "one input per honest party");

    let mut machines: BTreeMap<PartyId, AbbaState> = honest_ids
        .iter()
        .map(|&p| (p, AbbaState::new(setup.instance, setup.candidate)))
        .collect();
    let mut decided: BTreeMap<PartyId, (bool, u64)> = BTreeMap::new();
    let mut pool: Vec<(PartyId, PartyId, Message)> = Vec::new();

    let broadcast = |pool: &mut Vec<(PartyId, PartyId, Message)>, from: PartyId, msgs: Vec<Message>| {
        for msg in msgs {
            for &to in &honest_ids {
                pool.push((from, to, msg.clone()));
            }
        }
    };

    for (&p, &input) in honest_ids.iter().zip(setup.honest_inputs.iter()) {
        let st = machines.get_mut(&p).expect("honest machine");
        let justification = input.then(|| proof.clone());
        let step = st
            .input(&kit, cfg, &keys[p], input, justification)
            .map_err(|e| format!("party {p} rejected its own input: {e}"))?;
        if let Some(d) = st.decided() {
            decided.insert(p, d);
        }
        broadcast(&mut pool, p, step.out);
    }

    let tag = abba_tag(setup.instance, setup.candidate);
    for &b in &setup.byz {
        for value in [false, true] {
            let digest = vote_statement(&kit, &tag, 1, value);
            broadcast(
                &mut pool,
                b,
                vec![Message::AbbaVote {
                    instance: setup.instance,
                    candidate: setup.candidate,
                    round: 1,
                    value,
                    share: keys[b].sig_share(&tag, &digest),
                    basis: VoteBasis::Input,
                    justification: value.then(|| proof.clone()),
                }],
            );
        }
        for round in 1..=setup.menu_rounds {
            let digest = commit_statement(&kit, &tag, round, None);
            let coin_share = match round_coin(round) {
                CoinKind::Threshold => {
                    Some(keys[b].coin_share(&coin_tag(setup.instance, setup.candidate, round)))
                }
                CoinKind::Fixed(_) => None,
            };
            broadcast(
                &mut pool,
                b,
                vec![Message::AbbaCommit {
                    instance: setup.instance,
                    candidate: setup.candidate,
                    round,
                    value: None,
                    share: keys[b].sig_share(&tag, &digest),
                    evidence: None,
                    justification: None,
                    coin_share,
                }],
            );
        }
    }

    let mut deliveries = 0usize;
    while !pool.is_empty() {
        if deliveries >= max_deliveries {
            return Err(format!("no drain after {max_deliveries} deliveries"));
        }
        let idx = chooser.pick(pool.len());
        let (from, to, msg) = pool.swap_remove(idx);
        deliveries += 1;
        let st = machines.get_mut(&to).expect("deliveries target honest parties");
        let result = match msg {
            Message::AbbaVote { round, value, share, basis, justification, .. } => st.on_vote(
                &kit,
                cfg,
                &keys[to],
                from,
                round,
                value,
                share,
                &basis,
                justification.as_ref(),
            ),
            Message::AbbaCommit { round, value, share, evidence, justification, coin_share, .. } => {
                st.on_commit(
                    &kit,
                    cfg,
                    &keys[to],
                    from,
                    round,
                    value,
                    share,
                    evidence.as_ref(),
                    justification.as_ref(),
                    coin_share,
                )
            }
            Message::AbbaDecide { round, value, evidence, justification, .. } => {
                if !verify_decide(
                    &kit,
                    setup.instance,
                    setup.candidate,
                    round,
                    value,
                    &evidence,
                    justification.as_ref(),
                ) {
                    return Err(format!("party {from} emitted unverifiable evidence"));
                }
                decided.entry(to).or_insert((value, round));
                continue;
            }
            other => return Err(format!("unexpected message kind {}", other.kind())),
        };
        match result {
            Ok(step) => {
                if let Some(d) = st.decided() {
                    decided.entry(to).or_insert(d);
                }
                broadcast(&mut pool, to, step.out);
            }
            // Deliveries in any order are valid, so an honest machine
            // rejecting honest traffic is a bug, full stop.
            Err(_) if setup.byz.contains(&from) => {}
            Err(e) => return Err(format!("party {to} rejected honest traffic from {from}: {e}")),
        }
    }

    let mut decisions = Vec::with_capacity(honest_ids.len());
    for &p in &honest_ids {
        match decided.get(&p) {
            Some(&d) => decisions.push(d),
            None => return Err(format!("pool drained but party {p} never decided")),
        }
    }
    if decisions.iter().any(|d| d.0 != decisions[0].0) {
        return Err(format!("split decision: {decisions:?}"));
    }
    Ok(Outcome { decisions, deliveries })
}
