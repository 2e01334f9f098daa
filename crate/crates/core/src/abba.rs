//! Biased binary agreement, run per candidate in permutation order.
//!
//! Each round has a vote wave and a commit wave:
//!
//! * VOTE(r, b): one value per sender per round, carrying a signature
//!   share over the (r, b) statement. A vote for 1 must include the
//!   candidate's broadcast proof, so 1 can only win if the proposal
//!   really is retrievable. Past round one a vote also carries its
//!   basis: either the combined vote proof showing `n - f` parties
//!   voted b in round r-1, or a standoff proof (combined abstain
//!   commits from r-1) together with that round's coin agreeing with b.
//! * COMMIT(r, v): sent once per round, after votes from `n - f`
//!   distinct senders. v is a bit when `n - f` distinct senders voted
//!   it (the vote arithmetic lets at most one bit get there per round)
//!   and ⊥ otherwise. A bit commit carries the combined vote
//!   proof as evidence; every commit signs its own (r, v) statement,
//!   and on coin rounds a coin share rides along.
//! * Decide: `2f + 1` distinct commits on the same bit. The check is
//!   standing, run on every commit arrival for whatever round the
//!   commit names, so uniformity that forms after a party moved on
//!   still decides, and a party that advanced without committing sends
//!   the old round's commit once its vote quorum fills.
//! * Advance: `n - f` distinct commits and no decision yet. Adopt the
//!   committed bit if one was seen (at most one can carry valid
//!   evidence), else the round's coin, then vote in r + 1.
//!
//! Round 1's coin is the constant 1, which is what makes the agreement
//! biased: when `f + 1` honest parties hold the proof and vote 1, the
//! opposite bit can never reach `n - f` votes, so no 0-commit and no
//! 0-decision can form in round 1, every completing party leaves the
//! round estimating 1, and round 2 votes are unanimously 1 since a 0
//! vote would need a basis that cannot exist. Rounds past the first flip a
//! `2f + 1`-threshold coin, defeating schedules that keep the parties
//! split.
//!
//! The exported evidence is sound because `2f + 1` commits on b overlap
//! every `n - f` commit quorum in an honest b-committer: whoever
//! completes the round adopts b, the opposite bit can never again
//! gather `n - f` votes, and no conflicting decision or evidence can
//! form afterwards. A DECIDE message bundles the evidence and, for 1,
//! the broadcast proof, letting any receiver adopt the decision
//! instantly.

use crate::config::SysConfig;
use crate::crypto::{
    abba_tag, coin_tag, vcbc_tag, CoinShare, CryptoKit, PartyKey, Proof, RandomSeed, SigShare,
};
use crate::messages::{Message, VoteBasis};
use crate::{Instance, PartyId};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Coin flavor for a round (rounds are numbered from 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinKind {
    Fixed(bool),
    Threshold,
}

pub fn round_coin(round: u64) -> CoinKind {
    if round == 1 {
        CoinKind::Fixed(true)
    } else {
        CoinKind::Threshold
    }
}

/// Statement a VOTE share signs: bound to instance and candidate via the
/// tag, to round and value explicitly.
pub fn vote_statement(kit: &CryptoKit, tag: &str, round: u64, value: bool) -> Vec<u8> {
    kit.statement_digest(tag, &[b"vote", &round.to_be_bytes(), &[value as u8]])
}

/// Statement a COMMIT share signs. `None` is the abstain commit.
pub fn commit_statement(kit: &CryptoKit, tag: &str, round: u64, value: Option<bool>) -> Vec<u8> {
    let byte = match value {
        Some(false) => 0u8,
        Some(true) => 1u8,
        None => 2u8,
    };
    kit.statement_digest(tag, &[b"commit", &round.to_be_bytes(), &[byte]])
}

/// Full check of a DECIDE message. Transferable: everything needed is in
/// the message, so a receiver can adopt the decision without having run
/// the round itself.
pub fn verify_decide(
    kit: &CryptoKit,
    instance: Instance,
    candidate: PartyId,
    round: u64,
    value: bool,
    evidence: &Proof,
    justification: Option<&Proof>,
) -> bool {
    let tag = abba_tag(instance, candidate);
    let digest = commit_statement(kit, &tag, round, Some(value));
    if evidence.tag != tag || evidence.digest != digest || !kit.proof_verify(&tag, &digest, evidence) {
        return false;
    }
    match (value, justification) {
        (true, Some(j)) => j.tag == vcbc_tag(instance, candidate) && kit.proof_self_verify(j),
        (true, None) => false,
        (false, None) => true,
        (false, Some(_)) => false,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AbbaError {
    #[error("vote for 1 lacks a valid broadcast proof, or a vote for 0 carries one")]
    Unjustified,
    #[error("vote basis failed verification")]
    BadBasis,
    #[error("signature share failed verification")]
    BadShare,
    #[error("commit evidence failed verification")]
    BadEvidence,
    #[error("piggybacked coin share failed verification")]
    BadCoinShare,
    #[error("second commit from the same sender in one round")]
    DuplicateCommit,
    #[error("estimate already input")]
    AlreadyInput,
    #[error("input 1 requires the broadcast proof")]
    MissingJustification,
}

/// Messages to send plus a decision, if this step produced one.
#[derive(Debug, Default)]
pub struct AbbaStep {
    pub out: Vec<Message>,
    pub decided: Option<(bool, u64)>,
}

/// One party's state for one candidate's binary agreement.
///
/// Votes and commits are absorbed for any round at any time: early ones
/// take effect when the round is entered, late ones can still complete a
/// commit or a decision quorum for a round the party already left.
/// Before `input` the current round is 0 and nothing is sent.
#[derive(Debug)]
pub struct AbbaState {
    instance: Instance,
    candidate: PartyId,
    tag: String,
    round: u64,
    estimate: bool,
    justification: Option<Proof>,
    votes: BTreeMap<(u64, bool), BTreeMap<PartyId, SigShare>>,
    commits: BTreeMap<u64, BTreeMap<PartyId, (Option<bool>, SigShare)>>,
    /// First valid bit commit seen per round: the bit and its combined
    /// vote proof, reusable as the next round's vote basis.
    value_seen: BTreeMap<u64, (bool, Proof)>,
    coin_shares: BTreeMap<u64, BTreeMap<PartyId, CoinShare>>,
    coins: BTreeMap<u64, RandomSeed>,
    sent_commit: BTreeSet<u64>,
    /// A vote for 1 owed as soon as the broadcast proof arrives. Set when
    /// a standoff coin lands on 1 before any 1-vote was seen; the proof
    /// is in flight from whoever caused the abstains.
    pending_vote: Option<(u64, bool, VoteBasis)>,
    decided: Option<(bool, u64)>,
}

impl AbbaState {
    pub fn new(instance: Instance, candidate: PartyId) -> Self {
        AbbaState {
            instance,
            candidate,
            tag: abba_tag(instance, candidate),
            round: 0,
            estimate: false,
            justification: None,
            votes: BTreeMap::new(),
            commits: BTreeMap::new(),
            value_seen: BTreeMap::new(),
            coin_shares: BTreeMap::new(),
            coins: BTreeMap::new(),
            sent_commit: BTreeSet::new(),
            pending_vote: None,
            decided: None,
        }
    }

    pub fn candidate(&self) -> PartyId {
        self.candidate
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn decided(&self) -> Option<(bool, u64)> {
        self.decided
    }

    pub fn has_input(&self) -> bool {
        self.round > 0
    }

    /// Set the initial estimate. An estimate of 1 must come with the
    /// candidate's broadcast proof; it is attached to every 1-vote.
    pub fn input(
        &mut self,
        kit: &CryptoKit,
        cfg: &SysConfig,
        key: &PartyKey,
        value: bool,
        justification: Option<Proof>,
    ) -> Result<AbbaStep, AbbaError> {
        if self.round != 0 {
            return Err(AbbaError::AlreadyInput);
        }
        if value && justification.is_none() {
            return Err(AbbaError::MissingJustification);
        }
        self.round = 1;
        self.estimate = value;
        if self.justification.is_none() {
            self.justification = justification;
        }
        let mut step = AbbaStep::default();
        self.push_vote(kit, key, 1, value, VoteBasis::Input, &mut step);
        self.run_rounds(kit, cfg, key, &mut step);
        Ok(step)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_vote(
        &mut self,
        kit: &CryptoKit,
        cfg: &SysConfig,
        key: &PartyKey,
        from: PartyId,
        round: u64,
        value: bool,
        share: SigShare,
        basis: &VoteBasis,
        justification: Option<&Proof>,
    ) -> Result<AbbaStep, AbbaError> {
        if self.decided.is_some() || round == 0 {
            return Ok(AbbaStep::default());
        }
        match (value, justification) {
            (true, Some(j)) => {
                if j.tag != vcbc_tag(self.instance, self.candidate) || !kit.proof_self_verify(j) {
                    return Err(AbbaError::Unjustified);
                }
            }
            (true, None) | (false, Some(_)) => return Err(AbbaError::Unjustified),
            (false, None) => {}
        }
        if !self.basis_ok(kit, round, value, basis) {
            return Err(AbbaError::BadBasis);
        }
        let digest = vote_statement(kit, &self.tag, round, value);
        if share.issuer != from || !kit.sig_share_verify(&self.tag, &digest, &share) {
            return Err(AbbaError::BadShare);
        }
        if value && self.justification.is_none() {
            self.justification = justification.cloned();
        }
        self.votes.entry((round, value)).or_default().insert(from, share);
        let mut step = AbbaStep::default();
        self.release_pending(kit, key, &mut step);
        self.try_send_commit(kit, cfg, key, round, &mut step);
        self.run_rounds(kit, cfg, key, &mut step);
        Ok(step)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_commit(
        &mut self,
        kit: &CryptoKit,
        cfg: &SysConfig,
        key: &PartyKey,
        from: PartyId,
        round: u64,
        value: Option<bool>,
        share: SigShare,
        evidence: Option<&Proof>,
        justification: Option<&Proof>,
        coin_share: Option<CoinShare>,
    ) -> Result<AbbaStep, AbbaError> {
        if self.decided.is_some() || round == 0 {
            return Ok(AbbaStep::default());
        }
        let digest = commit_statement(kit, &self.tag, round, value);
        if share.issuer != from || !kit.sig_share_verify(&self.tag, &digest, &share) {
            return Err(AbbaError::BadShare);
        }
        match (value, evidence) {
            (Some(b), Some(e)) => {
                let vd = vote_statement(kit, &self.tag, round, b);
                if e.tag != self.tag || e.digest != vd || !kit.proof_verify(&self.tag, &vd, e) {
                    return Err(AbbaError::BadEvidence);
                }
            }
            (Some(_), None) | (None, Some(_)) => return Err(AbbaError::BadEvidence),
            (None, None) => {}
        }
        match (value, justification) {
            (Some(true), Some(j)) => {
                if j.tag != vcbc_tag(self.instance, self.candidate) || !kit.proof_self_verify(j) {
                    return Err(AbbaError::Unjustified);
                }
            }
            (Some(true), None) => return Err(AbbaError::Unjustified),
            (_, Some(_)) => return Err(AbbaError::Unjustified),
            (_, None) => {}
        }
        if let Some(cs) = &coin_share {
            let ct = coin_tag(self.instance, self.candidate, round);
            if round_coin(round) != CoinKind::Threshold
                || cs.issuer != from
                || cs.tag != ct
                || !kit.coin_share_verify(&ct, cs)
            {
                return Err(AbbaError::BadCoinShare);
            }
        }
        let slot = self.commits.entry(round).or_default();
        if slot.contains_key(&from) {
            return Err(AbbaError::DuplicateCommit);
        }
        slot.insert(from, (value, share));
        if let Some(b) = value {
            let e = evidence.expect("validated above").clone();
            let entry = self.value_seen.entry(round).or_insert((b, e));
            debug_assert_eq!(entry.0, b, "two bits evidenced in one round");
            if b && self.justification.is_none() {
                self.justification = justification.cloned();
            }
        }
        if let Some(cs) = coin_share {
            self.coin_shares.entry(round).or_default().insert(from, cs);
        }
        let mut step = AbbaStep::default();
        self.release_pending(kit, key, &mut step);
        self.check_decide(kit, cfg, round, &mut step);
        self.run_rounds(kit, cfg, key, &mut step);
        Ok(step)
    }

    fn basis_ok(&self, kit: &CryptoKit, round: u64, value: bool, basis: &VoteBasis) -> bool {
        match basis {
            VoteBasis::Input => round == 1,
            VoteBasis::Carried(p) => {
                round >= 2
                    && p.tag == self.tag
                    && p.digest == vote_statement(kit, &self.tag, round - 1, value)
                    && kit.proof_verify(&self.tag, &p.digest, p)
            }
            VoteBasis::Standoff { proof, seed } => {
                if round < 2
                    || proof.tag != self.tag
                    || proof.digest != commit_statement(kit, &self.tag, round - 1, None)
                    || !kit.proof_verify(&self.tag, &proof.digest, proof)
                {
                    return false;
                }
                match (round_coin(round - 1), seed) {
                    (CoinKind::Fixed(b), None) => value == b,
                    (CoinKind::Threshold, Some(s)) => {
                        let ct = coin_tag(self.instance, self.candidate, round - 1);
                        s.tag == ct && kit.coin_verify(&ct, s) && s.bit() == value
                    }
                    _ => false,
                }
            }
        }
    }

    fn push_vote(
        &mut self,
        kit: &CryptoKit,
        key: &PartyKey,
        round: u64,
        value: bool,
        basis: VoteBasis,
        step: &mut AbbaStep,
    ) {
        let digest = vote_statement(kit, &self.tag, round, value);
        let justification = if value { self.justification.clone() } else { None };
        debug_assert!(!value || justification.is_some());
        step.out.push(Message::AbbaVote {
            instance: self.instance,
            candidate: self.candidate,
            round,
            value,
            share: key.sig_share(&self.tag, &digest),
            basis,
            justification,
        });
    }

    /// Hold a 1-vote until the broadcast proof arrives, then send it.
    fn emit_vote(
        &mut self,
        kit: &CryptoKit,
        key: &PartyKey,
        round: u64,
        value: bool,
        basis: VoteBasis,
        step: &mut AbbaStep,
    ) {
        if value && self.justification.is_none() {
            self.pending_vote = Some((round, value, basis));
            return;
        }
        self.push_vote(kit, key, round, value, basis, step);
    }

    fn release_pending(&mut self, kit: &CryptoKit, key: &PartyKey, step: &mut AbbaStep) {
        if self.justification.is_none() {
            return;
        }
        if let Some((round, value, basis)) = self.pending_vote.take() {
            // A round left behind while the vote was owed needs no vote
            // anymore: the commits that moved us past it are public.
            if round == self.round {
                self.push_vote(kit, key, round, value, basis, step);
            }
        }
    }

    fn distinct_voters(&self, round: u64) -> usize {
        let mut seen = BTreeSet::new();
        for value in [false, true] {
            if let Some(m) = self.votes.get(&(round, value)) {
                seen.extend(m.keys().copied());
            }
        }
        seen.len()
    }

    /// Send the round's commit once votes from a quorum of senders are
    /// in, also for rounds already left, where the commit can still
    /// complete someone's decision quorum.
    fn try_send_commit(
        &mut self,
        kit: &CryptoKit,
        cfg: &SysConfig,
        key: &PartyKey,
        round: u64,
        step: &mut AbbaStep,
    ) {
        if self.round == 0 || round > self.round || self.sent_commit.contains(&round) {
            return;
        }
        if self.distinct_voters(round) < cfg.quorum() {
            return;
        }
        let mut value = None;
        for bit in [false, true] {
            if self.votes.get(&(round, bit)).map(BTreeMap::len).unwrap_or(0) >= cfg.quorum() {
                debug_assert!(value.is_none(), "two bits at quorum in one round");
                value = Some(bit);
            }
        }
        let evidence = value.map(|bit| {
            let digest = vote_statement(kit, &self.tag, round, bit);
            let shares: Vec<SigShare> =
                self.votes[&(round, bit)].values().cloned().collect();
            kit.sig_combine(&self.tag, &digest, &shares, cfg.quorum())
                .expect("quorum of verified vote shares")
        });
        let justification = match value {
            Some(true) => {
                debug_assert!(self.justification.is_some(), "1-votes carried the proof");
                self.justification.clone()
            }
            _ => None,
        };
        let digest = commit_statement(kit, &self.tag, round, value);
        let coin_share = match round_coin(round) {
            CoinKind::Threshold => {
                Some(key.coin_share(&coin_tag(self.instance, self.candidate, round)))
            }
            CoinKind::Fixed(_) => None,
        };
        self.sent_commit.insert(round);
        step.out.push(Message::AbbaCommit {
            instance: self.instance,
            candidate: self.candidate,
            round,
            value,
            share: key.sig_share(&self.tag, &digest),
            evidence,
            justification,
            coin_share,
        });
    }

    /// Standing decision check for one round: `2f + 1` distinct commits
    /// on the same bit decide it, whatever round this party is in.
    fn check_decide(&mut self, kit: &CryptoKit, cfg: &SysConfig, round: u64, step: &mut AbbaStep) {
        if self.decided.is_some() {
            return;
        }
        let Some(pool) = self.commits.get(&round) else {
            return;
        };
        for bit in [false, true] {
            let shares: Vec<SigShare> = pool
                .values()
                .filter(|(v, _)| *v == Some(bit))
                .map(|(_, s)| s.clone())
                .collect();
            if shares.len() >= cfg.high_threshold() {
                let digest = commit_statement(kit, &self.tag, round, Some(bit));
                let evidence = kit
                    .sig_combine(&self.tag, &digest, &shares, cfg.high_threshold())
                    .expect("threshold of verified commit shares");
                let justification = if bit {
                    let j = self.justification.clone();
                    debug_assert!(j.is_some(), "1-commits carried the proof");
                    j
                } else {
                    None
                };
                self.decided = Some((bit, round));
                step.decided = Some((bit, round));
                step.out.push(Message::AbbaDecide {
                    instance: self.instance,
                    candidate: self.candidate,
                    round,
                    value: bit,
                    evidence,
                    justification,
                });
                return;
            }
        }
    }

    /// Coin bit for a round, if derivable yet.
    fn coin_bit(&mut self, kit: &CryptoKit, cfg: &SysConfig, round: u64) -> Option<(bool, Option<RandomSeed>)> {
        match round_coin(round) {
            CoinKind::Fixed(b) => Some((b, None)),
            CoinKind::Threshold => {
                if let Some(seed) = self.coins.get(&round) {
                    return Some((seed.bit(), Some(seed.clone())));
                }
                let shares = self.coin_shares.get(&round)?;
                if shares.len() < cfg.high_threshold() {
                    return None;
                }
                let ct = coin_tag(self.instance, self.candidate, round);
                let list: Vec<CoinShare> = shares.values().cloned().collect();
                let seed = kit
                    .coin_toss(&ct, &list, cfg.high_threshold())
                    .expect("threshold met with verified shares");
                let bit = seed.bit();
                self.coins.insert(round, seed.clone());
                Some((bit, Some(seed)))
            }
        }
    }

    /// Complete the current round and any already-satisfied successors:
    /// adopt an estimate from a quorum of commits and vote in the next
    /// round, repeating while stored messages keep rounds firing.
    fn run_rounds(&mut self, kit: &CryptoKit, cfg: &SysConfig, key: &PartyKey, step: &mut AbbaStep) {
        loop {
            if self.decided.is_some() || self.round == 0 {
                return;
            }
            let r = self.round;
            let committers = self.commits.get(&r).map(BTreeMap::len).unwrap_or(0);
            if committers < cfg.quorum() {
                return;
            }
            let (est, basis) = match self.value_seen.get(&r) {
                Some((b, proof)) => (*b, VoteBasis::Carried(proof.clone())),
                None => {
                    let Some((bit, seed)) = self.coin_bit(kit, cfg, r) else {
                        return;
                    };
                    let digest = commit_statement(kit, &self.tag, r, None);
                    let shares: Vec<SigShare> = self.commits[&r]
                        .values()
                        .filter(|(v, _)| v.is_none())
                        .map(|(_, s)| s.clone())
                        .collect();
                    debug_assert!(shares.len() >= cfg.quorum(), "no bit seen, so all abstained");
                    let proof = kit
                        .sig_combine(&self.tag, &digest, &shares, cfg.quorum())
                        .expect("quorum of verified abstain shares");
                    (bit, VoteBasis::Standoff { proof, seed })
                }
            };
            self.estimate = est;
            self.round = r + 1;
            self.emit_vote(kit, key, r + 1, est, basis, step);
            self.try_send_commit(kit, cfg, key, r + 1, step);
        }
    }
}
