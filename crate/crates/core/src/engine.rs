//! The per-party engine: wires the five sub-protocols into one sequential
//! agreement pipeline and runs it instance after instance.
//!
//! Instance lifecycle: pick a committee, let members broadcast their
//! requests, spread proven proposals until `n - f` parties endorsed one,
//! fix the candidate order with a second coin, then run binary agreement
//! candidate by candidate. The first candidate to win yields the decision;
//! its position (1-based) is the instance's iteration count.
//!
//! Messages that arrive ahead of the state they need are buffered and
//! replayed: pre-committee traffic until the committee is known, binary
//! agreement traffic until the order is known or while its candidate is
//! still ahead of the cursor, whole instances until the engine gets there.
//! Traffic that can no longer matter is dropped and surfaced as a note, so
//! the caller can keep drop statistics without reaching into the engine.
//!
//! A decision can also arrive ready-made: a DECIDE message carries
//! self-contained evidence, so a party that trails the quorum adopts the
//! outcome directly, skipping or cutting short its own agreement runs.

use crate::abba::{verify_decide, AbbaError, AbbaState, AbbaStep};
use crate::committee::{CsError, CsState};
use crate::config::{ProtocolOptions, SysConfig};
use crate::crypto::{vcbc_tag, CryptoKit, PartyKey, Proof};
use crate::messages::{Message, Outbound, Recipient};
use crate::permutation::{PermError, PermState};
use crate::pvcbc::{VcbcError, VcbcReceiver, VcbcSender};
use crate::recommend::RecError;
use crate::recommend::RecommendState;
use crate::{Instance, PartyId};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Supplies the payload a committee member broadcasts for an instance.
pub trait RequestSource: Send {
    fn next_request(&mut self, instance: Instance) -> Vec<u8>;
}

/// Outcome of one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub instance: Instance,
    pub candidate: PartyId,
    pub payload: Vec<u8>,
    pub proof: Proof,
    /// 1-based position of the winning candidate in the order; the number
    /// of binary agreements this party sat through.
    pub iterations: u64,
    /// Binary agreement round in which the winner was decided. Parties can
    /// legitimately differ here (a trailing party adopts whatever round
    /// the evidence names), so it is informational.
    pub round: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("instance {0}: second decision for the same instance")]
    DoubleDecide(Instance),
    #[error("instance {0}: every candidate was rejected")]
    Exhausted(Instance),
    #[error("instance {0}: candidate {1} holds both an acceptance and a rejection")]
    ConflictingEvidence(Instance, PartyId),
}

/// Side information the engine reports alongside its outbound traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineNote {
    CommitteeSelected { instance: Instance, members: Vec<PartyId> },
    BroadcastProven { instance: Instance },
    Equivocation { instance: Instance, proposer: PartyId },
    RecommendComplete { instance: Instance, senders: usize },
    /// Candidate order fixed; `holdings` is the set of proposers whose
    /// proven payload this party holds at that moment.
    OrderFixed { instance: Instance, order: Vec<PartyId>, holdings: Vec<PartyId> },
    InputCast { instance: Instance, candidate: PartyId, value: bool },
    ZeroDecided { instance: Instance, candidate: PartyId, round: u64, by_evidence: bool },
    OneDecided { instance: Instance, candidate: PartyId, round: u64, by_evidence: bool },
    FetchStarted { instance: Instance, candidate: PartyId },
    Decided { decision: Decision },
    Dropped { instance: Instance, kind: &'static str, reason: String },
}

#[derive(Debug, Default)]
pub struct EngineOutput {
    pub out: Vec<Outbound>,
    pub notes: Vec<EngineNote>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Select,
    Spread,
    Order,
    Decide,
    Fetch,
    Done,
}

/// Cap on buffered envelopes per future instance; beyond it the oldest
/// are discarded. Generous next to the ~15n envelopes an instance
/// generates.
fn future_cap(n: usize) -> usize {
    64 * n
}

struct FetchTarget {
    candidate: PartyId,
    round: u64,
}

pub struct Engine {
    cfg: SysConfig,
    opts: ProtocolOptions,
    kit: CryptoKit,
    key: PartyKey,
    me: PartyId,
    requests: Box<dyn RequestSource>,
    target: u64,
    instance: Instance,
    phase: Phase,
    cs: CsState,
    vcbc_rx: VcbcReceiver,
    vcbc_tx: Option<VcbcSender>,
    recs: RecommendState,
    perm: PermState,
    committee: Option<Vec<PartyId>>,
    order: Vec<PartyId>,
    cursor: usize,
    abba: Option<AbbaState>,
    /// Verified rejection evidence for candidates the cursor has not
    /// reached yet, kept verbatim for relaying.
    zero_evidence: BTreeMap<PartyId, Message>,
    relayed: BTreeSet<PartyId>,
    fetching: Option<FetchTarget>,
    pre_committee: VecDeque<(PartyId, Message)>,
    pre_order: VecDeque<(PartyId, Message)>,
    later_candidates: BTreeMap<PartyId, VecDeque<(PartyId, Message)>>,
    future: BTreeMap<Instance, VecDeque<(PartyId, Message)>>,
    /// Decided (candidate, payload, proof) per finished instance, kept to
    /// answer stragglers' FETCHes after we have moved on.
    archive: BTreeMap<Instance, (PartyId, Vec<u8>, Proof)>,
    supplied: BTreeSet<(Instance, PartyId, PartyId)>,
    decisions: Vec<Decision>,
}

impl Engine {
    pub fn new(
        cfg: SysConfig,
        opts: ProtocolOptions,
        key: PartyKey,
        requests: Box<dyn RequestSource>,
        target: u64,
    ) -> Self {
        let kit = CryptoKit::new(&cfg);
        let me = key.index;
        Engine {
            cfg,
            opts,
            kit,
            key,
            me,
            requests,
            target,
            instance: 1,
            phase: Phase::Select,
            cs: CsState::new(1),
            vcbc_rx: VcbcReceiver::new(1),
            vcbc_tx: None,
            recs: RecommendState::new(1),
            perm: PermState::new(1),
            committee: None,
            order: Vec::new(),
            cursor: 0,
            abba: None,
            zero_evidence: BTreeMap::new(),
            relayed: BTreeSet::new(),
            fetching: None,
            pre_committee: VecDeque::new(),
            pre_order: VecDeque::new(),
            later_candidates: BTreeMap::new(),
            future: BTreeMap::new(),
            archive: BTreeMap::new(),
            supplied: BTreeSet::new(),
            decisions: Vec::new(),
        }
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn instance(&self) -> Instance {
        self.instance
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// One line of where this party currently is, for stall reports.
    pub fn stall_info(&self) -> String {
        let phase = match self.phase {
            Phase::Select => "select",
            Phase::Spread => "spread",
            Phase::Order => "order",
            Phase::Decide => "decide",
            Phase::Fetch => "fetch",
            Phase::Done => "done",
        };
        let detail = match self.phase {
            Phase::Spread => format!(" senders={}", self.recs.sender_count()),
            Phase::Decide => format!(
                " cursor={} round={}",
                self.cursor,
                self.abba.as_ref().map(|a| a.round()).unwrap_or(0)
            ),
            _ => String::new(),
        };
        format!("party {} instance {} phase {phase}{detail}", self.me, self.instance)
    }

    /// Kick off the first instance: contribute our selection share.
    pub fn start(&mut self) -> EngineOutput {
        let mut output = EngineOutput::default();
        output.out.push(self.cs.start(&self.key).expect("fresh instance"));
        output
    }

    /// Deliver one message; returns everything to send plus notes.
    pub fn dispatch(&mut self, from: PartyId, msg: Message) -> Result<EngineOutput, EngineError> {
        let mut output = EngineOutput::default();
        let mut work: VecDeque<(PartyId, Message)> = VecDeque::new();
        work.push_back((from, msg));
        while let Some((f, m)) = work.pop_front() {
            self.handle(f, m, &mut output, &mut work)?;
        }
        Ok(output)
    }

    fn drop_note(
        &self,
        output: &mut EngineOutput,
        instance: Instance,
        kind: &'static str,
        reason: impl Into<String>,
    ) {
        output.notes.push(EngineNote::Dropped { instance, kind, reason: reason.into() });
    }

    fn handle(
        &mut self,
        from: PartyId,
        msg: Message,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        let inst = msg.instance();
        let kind = msg.kind();
        if self.phase == Phase::Done {
            self.drop_note(output, inst, kind, "halted");
            return Ok(());
        }
        if inst < self.instance {
            // Old instances are gone, with one exception: a straggler
            // fetching the payload of a decision we archived.
            if let Message::Fetch { instance, candidate } = msg {
                self.serve_fetch(instance, candidate, from, output);
            } else {
                self.drop_note(output, inst, kind, "past-instance");
            }
            return Ok(());
        }
        if inst > self.instance {
            let q = self.future.entry(inst).or_default();
            q.push_back((from, msg));
            if q.len() > future_cap(self.cfg.n) {
                let (_, old) = q.pop_front().expect("nonempty");
                self.drop_note(output, old.instance(), old.kind(), "future-overflow");
            }
            return Ok(());
        }

        match msg {
            Message::CsShare { share, .. } => match self.cs.on_share(&self.kit, &self.cfg, from, share) {
                Ok(Some(members)) => {
                    let members = members.clone();
                    self.committee_known(members, output, work);
                }
                Ok(None) => {}
                Err(e) => self.drop_note(output, inst, kind, cs_reason(e)),
            },
            Message::VcbcSend { proposer, payload, .. } => {
                let Some(committee) = self.committee.as_ref() else {
                    self.pre_committee
                        .push_back((from, Message::VcbcSend { instance: inst, proposer, payload }));
                    return Ok(());
                };
                if from != proposer {
                    self.drop_note(output, inst, kind, "sender-is-not-proposer");
                    return Ok(());
                }
                if !committee.contains(&proposer) {
                    self.drop_note(output, inst, kind, "proposer-not-in-committee");
                    return Ok(());
                }
                match self.vcbc_rx.on_send(&self.kit, &self.key, proposer, &payload) {
                    Ok(Some(echo)) => output.out.push(echo),
                    Ok(None) => {}
                    Err(VcbcError::Equivocation) => {
                        output.notes.push(EngineNote::Equivocation { instance: inst, proposer });
                        self.drop_note(output, inst, kind, "conflicting-payload");
                    }
                    Err(e) => self.drop_note(output, inst, kind, vcbc_reason(e)),
                }
            }
            Message::VcbcEcho { proposer, share, .. } => {
                if proposer != self.me || self.vcbc_tx.is_none() {
                    self.drop_note(output, inst, kind, "echo-for-broadcast-we-do-not-run");
                    return Ok(());
                }
                let tx = self.vcbc_tx.as_mut().expect("checked");
                match tx.on_echo(&self.kit, &self.cfg, from, share) {
                    Ok(Some(proof)) => {
                        let proof = proof.clone();
                        let payload = tx.payload().to_vec();
                        output.notes.push(EngineNote::BroadcastProven { instance: inst });
                        output.out.push(Outbound::all(Message::Propose {
                            instance: inst,
                            proposer: self.me,
                            payload,
                            proof,
                        }));
                    }
                    Ok(None) => {}
                    Err(e) => self.drop_note(output, inst, kind, vcbc_reason(e)),
                }
            }
            Message::Propose { proposer, payload, proof, .. } => {
                self.on_proven(from, proposer, payload, proof, false, output, work)?;
            }
            Message::Recommendation { proposer, payload, proof, .. } => {
                self.on_proven(from, proposer, payload, proof, true, output, work)?;
            }
            Message::PermShare { share, .. } => {
                if let Err(e) = self.perm.on_share(&self.kit, from, share) {
                    self.drop_note(output, inst, kind, perm_reason(e));
                    return Ok(());
                }
                if self.phase == Phase::Order {
                    self.try_fix_order(output, work)?;
                }
            }
            Message::AbbaVote { .. } | Message::AbbaCommit { .. } | Message::AbbaDecide { .. } => {
                self.on_abba_traffic(from, msg, output, work)?;
            }
            Message::Fetch { instance, candidate } => {
                self.serve_fetch(instance, candidate, from, output);
            }
            Message::Supply { candidate, payload, proof, .. } => {
                self.on_supply(candidate, payload, proof, output, work)?;
            }
        }
        Ok(())
    }

    fn committee_known(
        &mut self,
        members: Vec<PartyId>,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) {
        output.notes.push(EngineNote::CommitteeSelected {
            instance: self.instance,
            members: members.clone(),
        });
        self.phase = Phase::Spread;
        if members.contains(&self.me) {
            let payload = self.requests.next_request(self.instance);
            let mut tx = VcbcSender::new(&self.kit, self.instance, self.me, payload);
            output.out.push(tx.start(self.me).expect("fresh sender"));
            self.vcbc_tx = Some(tx);
        }
        self.committee = Some(members);
        while let Some(buffered) = self.pre_committee.pop_front() {
            work.push_back(buffered);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_proven(
        &mut self,
        from: PartyId,
        proposer: PartyId,
        payload: Vec<u8>,
        proof: Proof,
        endorsement: bool,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        let inst = self.instance;
        let kind = if endorsement { "RECOMMENDATION" } else { "PROPOSE" };
        let Some(committee) = self.committee.clone() else {
            let m = if endorsement {
                Message::Recommendation { instance: inst, proposer, payload, proof }
            } else {
                Message::Propose { instance: inst, proposer, payload, proof }
            };
            self.pre_committee.push_back((from, m));
            return Ok(());
        };
        if !endorsement && from != proposer {
            self.drop_note(output, inst, kind, "sender-is-not-proposer");
            return Ok(());
        }
        match self.recs.on_proven(
            &self.kit,
            &self.cfg,
            &self.opts,
            &committee,
            from,
            proposer,
            &payload,
            &proof,
            endorsement,
        ) {
            Ok(update) => {
                if let Some(endorse) = update.endorse {
                    output.out.push(endorse);
                }
                if update.completed {
                    output.notes.push(EngineNote::RecommendComplete {
                        instance: inst,
                        senders: self.recs.sender_count(),
                    });
                    self.phase = Phase::Order;
                    output.out.push(self.perm.start(&self.key).expect("first release"));
                    self.try_fix_order(output, work)?;
                }
                // A proposal landing while we wait for its payload
                // completes the pending decision.
                if update.new_entry && self.phase == Phase::Fetch {
                    self.try_finish_from_fetch(output, work)?;
                }
            }
            Err(e) => self.drop_note(output, inst, kind, rec_reason(e)),
        }
        Ok(())
    }

    fn try_fix_order(
        &mut self,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        let committee = self.committee.as_ref().expect("ordering implies committee");
        let Some(order) = self.perm.try_complete(&self.kit, &self.cfg, committee) else {
            return Ok(());
        };
        self.order = order.clone();
        self.cursor = 0;
        self.phase = Phase::Decide;
        output.notes.push(EngineNote::OrderFixed {
            instance: self.instance,
            order: self.order.clone(),
            holdings: self.recs.proposers().collect(),
        });
        while let Some(buffered) = self.pre_order.pop_front() {
            work.push_back(buffered);
        }
        self.start_candidate(output, work)
    }

    /// Begin binary agreement at the cursor, skipping candidates whose
    /// rejection we already hold evidence for.
    fn start_candidate(
        &mut self,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        loop {
            if self.cursor >= self.order.len() {
                return Err(EngineError::Exhausted(self.instance));
            }
            let candidate = self.order[self.cursor];
            if let Some(decide) = self.zero_evidence.remove(&candidate) {
                if let Message::AbbaDecide { round, .. } = &decide {
                    output.notes.push(EngineNote::ZeroDecided {
                        instance: self.instance,
                        candidate,
                        round: *round,
                        by_evidence: true,
                    });
                }
                self.relay_decide(candidate, decide, output);
                self.cursor += 1;
                continue;
            }
            let mut abba = AbbaState::new(self.instance, candidate);
            let entry = self.recs.entry(candidate);
            let value = entry.is_some();
            let justification = entry.map(|(_, p)| p.clone());
            output.notes.push(EngineNote::InputCast { instance: self.instance, candidate, value });
            let step = abba
                .input(&self.kit, &self.cfg, &self.key, value, justification)
                .expect("fresh agreement accepts input");
            self.abba = Some(abba);
            self.absorb_abba_step(step, output, work)?;
            if let Some(q) = self.later_candidates.remove(&candidate) {
                for buffered in q {
                    work.push_back(buffered);
                }
            }
            return Ok(());
        }
    }

    fn on_abba_traffic(
        &mut self,
        from: PartyId,
        msg: Message,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        if self.phase != Phase::Decide && self.phase != Phase::Fetch {
            self.pre_order.push_back((from, msg));
            return Ok(());
        }
        let inst = self.instance;
        let kind = msg.kind();
        let candidate = match &msg {
            Message::AbbaVote { candidate, .. }
            | Message::AbbaCommit { candidate, .. }
            | Message::AbbaDecide { candidate, .. } => *candidate,
            _ => unreachable!("routed by kind"),
        };
        let Some(pos) = self.order.iter().position(|&c| c == candidate) else {
            self.drop_note(output, inst, kind, "candidate-not-in-order");
            return Ok(());
        };

        let decide_info = match &msg {
            Message::AbbaDecide { round, value, evidence, justification, .. } => {
                let valid = verify_decide(
                    &self.kit,
                    inst,
                    candidate,
                    *round,
                    *value,
                    evidence,
                    justification.as_ref(),
                );
                Some((*round, *value, valid))
            }
            _ => None,
        };
        if let Some((round, value, valid)) = decide_info {
            if !valid {
                self.drop_note(output, inst, kind, "evidence-failed-verification");
                return Ok(());
            }
            if pos < self.cursor {
                if value {
                    // We rejected this candidate, yet sound acceptance
                    // evidence exists: agreement is broken.
                    return Err(EngineError::ConflictingEvidence(inst, candidate));
                }
                self.drop_note(output, inst, kind, "candidate-already-passed");
                return Ok(());
            }
            if self.phase == Phase::Fetch {
                // The cursor candidate is already accepted on our side.
                let ours = self.fetching.as_ref().map(|t| t.candidate) == Some(candidate);
                match (ours, value) {
                    (true, true) => self.drop_note(output, inst, kind, "duplicate-acceptance"),
                    (true, false) | (false, true) => {
                        return Err(EngineError::ConflictingEvidence(inst, candidate))
                    }
                    (false, false) => self.drop_note(output, inst, kind, "instance-already-settled"),
                }
                return Ok(());
            }
            if value {
                self.cursor = pos;
                output.notes.push(EngineNote::OneDecided {
                    instance: inst,
                    candidate,
                    round,
                    by_evidence: true,
                });
                self.relay_decide(candidate, msg, output);
                self.abba = None;
                return self.conclude_accept(candidate, round, output, work);
            }
            if pos == self.cursor {
                output.notes.push(EngineNote::ZeroDecided {
                    instance: inst,
                    candidate,
                    round,
                    by_evidence: true,
                });
                self.relay_decide(candidate, msg, output);
                self.abba = None;
                self.cursor += 1;
                return self.start_candidate(output, work);
            }
            self.zero_evidence.insert(candidate, msg);
            return Ok(());
        }

        if pos > self.cursor {
            self.later_candidates.entry(candidate).or_default().push_back((from, msg));
            return Ok(());
        }
        if pos < self.cursor {
            self.drop_note(output, inst, kind, "candidate-already-passed");
            return Ok(());
        }
        let Some(abba) = self.abba.as_mut() else {
            self.drop_note(output, inst, kind, "candidate-already-settled");
            return Ok(());
        };
        let result = match &msg {
            Message::AbbaVote { round, value, share, basis, justification, .. } => abba.on_vote(
                &self.kit,
                &self.cfg,
                &self.key,
                from,
                *round,
                *value,
                share.clone(),
                basis,
                justification.as_ref(),
            ),
            Message::AbbaCommit {
                round,
                value,
                share,
                evidence,
                justification,
                coin_share,
                ..
            } => abba.on_commit(
                &self.kit,
                &self.cfg,
                &self.key,
                from,
                *round,
                *value,
                share.clone(),
                evidence.as_ref(),
                justification.as_ref(),
                coin_share.clone(),
            ),
            _ => unreachable!("decide handled above"),
        };
        match result {
            Ok(step) => self.absorb_abba_step(step, output, work),
            Err(e) => {
                self.drop_note(output, inst, kind, abba_reason(e));
                Ok(())
            }
        }
    }

    fn absorb_abba_step(
        &mut self,
        step: AbbaStep,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        for m in step.out {
            if let Message::AbbaDecide { candidate, .. } = &m {
                self.relayed.insert(*candidate);
            }
            output.out.push(Outbound::all(m));
        }
        let Some((value, round)) = step.decided else {
            return Ok(());
        };
        let candidate = self.abba.as_ref().expect("step came from this agreement").candidate();
        self.abba = None;
        if value {
            output.notes.push(EngineNote::OneDecided {
                instance: self.instance,
                candidate,
                round,
                by_evidence: false,
            });
            self.conclude_accept(candidate, round, output, work)
        } else {
            output.notes.push(EngineNote::ZeroDecided {
                instance: self.instance,
                candidate,
                round,
                by_evidence: false,
            });
            self.cursor += 1;
            self.start_candidate(output, work)
        }
    }

    /// The candidate at the cursor was accepted; produce the decision, or
    /// go fetch the payload if we never saw it.
    fn conclude_accept(
        &mut self,
        candidate: PartyId,
        round: u64,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        if let Some((payload, proof)) = self.recs.entry(candidate).cloned() {
            return self.finish_instance(candidate, payload, proof, round, output, work);
        }
        self.phase = Phase::Fetch;
        self.fetching = Some(FetchTarget { candidate, round });
        output.notes.push(EngineNote::FetchStarted { instance: self.instance, candidate });
        output.out.push(Outbound::all(Message::Fetch { instance: self.instance, candidate }));
        Ok(())
    }

    fn try_finish_from_fetch(
        &mut self,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        let Some(target) = self.fetching.as_ref() else {
            return Ok(());
        };
        let (candidate, round) = (target.candidate, target.round);
        if let Some((payload, proof)) = self.recs.entry(candidate).cloned() {
            self.fetching = None;
            return self.finish_instance(candidate, payload, proof, round, output, work);
        }
        Ok(())
    }

    fn on_supply(
        &mut self,
        candidate: PartyId,
        payload: Vec<u8>,
        proof: Proof,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        let inst = self.instance;
        let awaiting = self.phase == Phase::Fetch
            && self.fetching.as_ref().map(|t| t.candidate) == Some(candidate);
        if !awaiting {
            self.drop_note(output, inst, "SUPPLY", "unsolicited-supply");
            return Ok(());
        }
        let tag = vcbc_tag(inst, candidate);
        let digest = self.kit.proposal_digest(&tag, &payload);
        if !self.kit.proof_verify(&tag, &digest, &proof) {
            self.drop_note(output, inst, "SUPPLY", "supply-proof-invalid");
            return Ok(());
        }
        let round = self.fetching.take().expect("awaiting checked").round;
        self.finish_instance(candidate, payload, proof, round, output, work)
    }

    fn serve_fetch(
        &mut self,
        instance: Instance,
        candidate: PartyId,
        from: PartyId,
        output: &mut EngineOutput,
    ) {
        let pair = if instance == self.instance {
            self.recs.entry(candidate).cloned()
        } else {
            self.archive.get(&instance).and_then(|(c, payload, proof)| {
                (*c == candidate).then(|| (payload.clone(), proof.clone()))
            })
        };
        let Some((payload, proof)) = pair else {
            self.drop_note(output, instance, "FETCH", "payload-not-held");
            return;
        };
        if !self.supplied.insert((instance, candidate, from)) {
            self.drop_note(output, instance, "FETCH", "already-supplied");
            return;
        }
        output.out.push(Outbound {
            to: Recipient::One(from),
            msg: Message::Supply { instance, candidate, payload, proof },
        });
    }

    fn relay_decide(&mut self, candidate: PartyId, msg: Message, output: &mut EngineOutput) {
        if self.relayed.insert(candidate) {
            output.out.push(Outbound::all(msg));
        }
    }

    fn finish_instance(
        &mut self,
        candidate: PartyId,
        payload: Vec<u8>,
        proof: Proof,
        round: u64,
        output: &mut EngineOutput,
        work: &mut VecDeque<(PartyId, Message)>,
    ) -> Result<(), EngineError> {
        if self.decisions.iter().any(|d| d.instance == self.instance) {
            return Err(EngineError::DoubleDecide(self.instance));
        }
        let decision = Decision {
            instance: self.instance,
            candidate,
            payload: payload.clone(),
            proof: proof.clone(),
            iterations: self.cursor as u64 + 1,
            round,
        };
        self.archive.insert(self.instance, (candidate, payload, proof));
        self.decisions.push(decision.clone());
        output.notes.push(EngineNote::Decided { decision });
        if self.decisions.len() as u64 >= self.target {
            self.phase = Phase::Done;
            return Ok(());
        }
        // Reset for the next instance and replay whatever arrived early.
        self.instance += 1;
        self.phase = Phase::Select;
        self.cs = CsState::new(self.instance);
        self.vcbc_rx = VcbcReceiver::new(self.instance);
        self.vcbc_tx = None;
        self.recs = RecommendState::new(self.instance);
        self.perm = PermState::new(self.instance);
        self.committee = None;
        self.order = Vec::new();
        self.cursor = 0;
        self.abba = None;
        self.zero_evidence.clear();
        self.relayed.clear();
        self.fetching = None;
        self.pre_committee.clear();
        self.pre_order.clear();
        self.later_candidates.clear();
        output.out.push(self.cs.start(&self.key).expect("fresh instance"));
        if let Some(q) = self.future.remove(&self.instance) {
            for buffered in q {
                work.push_back(buffered);
            }
        }
        Ok(())
    }
}

fn cs_reason(e: CsError) -> String {
    format!("selection-share: {e}")
}

fn vcbc_reason(e: VcbcError) -> String {
    format!("broadcast: {e}")
}

fn rec_reason(e: RecError) -> String {
    format!("recommendation: {e}")
}

fn perm_reason(e: PermError) -> String {
    format!("ordering-share: {e}")
}

fn abba_reason(e: AbbaError) -> String {
    format!("agreement: {e}")
}
