//! Deterministic adversarial network simulator.
//!
//! Single-threaded discrete-event loop: every send is assigned a delivery
//! tick by the strategy's scheduling policy (seeded, so runs are exactly
//! reproducible), envelopes come due in (tick, sequence) order, and
//! logical time is simply the number of deliveries so far. Nothing is ever
//! lost: corrupted parties may stay silent, but the network itself
//! delivers every envelope, which is the partial-synchrony guarantee the
//! protocol needs.
//!
//! A run drives all parties until every honest engine has decided the
//! requested number of instances and the queue has drained, then checks
//! the ground truths (agreement, external validity, completeness) and
//! emits a trace, metrics, and per-instance audits.

pub mod adversary;
pub mod metrics;
pub mod trace;

pub use adversary::{
    predict_committee, predict_order, strategy_by_name, AdversaryStrategy, Behavior, Scheduling,
    BUILTIN_NAMES,
};
pub use metrics::{InstanceAudit, InstanceMetrics, Metrics};
pub use trace::{parse_trace, TraceCollector, TraceLine, TraceMode};

use crate::config::{ProtocolOptions, SysConfig};
use crate::crypto::{keyed_hash, vcbc_tag, CryptoKit};
use crate::engine::{Decision, Engine, EngineNote, RequestSource};
use crate::messages::{Message, Outbound, Recipient};
use crate::sim::adversary::ByzParty;
use crate::{Instance, PartyId};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invariant violated: {0}")]
    Violation(String),
    #[error("stalled with an empty network: {0}")]
    Stalled(String),
    #[error("delivery budget exhausted after {0} deliveries")]
    Runaway(u64),
}

/// Everything a finished run reports.
#[derive(Debug)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    pub instances: u64,
    pub deliveries: u64,
    pub trace_hash: String,
    /// JSONL lines, only under [`TraceMode::Full`].
    pub trace: Option<Vec<String>>,
    pub metrics: Metrics,
    pub audits: Vec<InstanceAudit>,
    pub decisions: BTreeMap<PartyId, Vec<Decision>>,
}

pub struct Simulation {
    cfg: SysConfig,
    opts: ProtocolOptions,
    strategy: AdversaryStrategy,
    seed: u64,
    instances: u64,
    mode: TraceMode,
    budget: u64,
}

impl Simulation {
    pub fn new(cfg: SysConfig, strategy: AdversaryStrategy, seed: u64, instances: u64) -> Self {
        Simulation {
            cfg,
            opts: ProtocolOptions::default(),
            strategy,
            seed,
            instances,
            mode: TraceMode::Hash,
            budget: 1_000_000,
        }
    }

    pub fn options(mut self, opts: ProtocolOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn trace_mode(mut self, mode: TraceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn delivery_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn run(self) -> Result<RunReport, SimError> {
        Runner::new(self).run()
    }
}

/// Convenience wrapper for the common case.
pub fn run_simulation(
    cfg: &SysConfig,
    strategy: &AdversaryStrategy,
    seed: u64,
    instances: u64,
    mode: TraceMode,
) -> Result<RunReport, SimError> {
    Simulation::new(cfg.clone(), strategy.clone(), seed, instances).trace_mode(mode).run()
}

/// Payloads handed to committee members: a distinct deterministic blob per
/// (run seed, party, instance).
struct SeededRequests {
    master_seed: [u8; 32],
    payload_len: usize,
    party: PartyId,
    run_seed: u64,
}

impl RequestSource for SeededRequests {
    fn next_request(&mut self, instance: Instance) -> Vec<u8> {
        keyed_hash(
            self.payload_len,
            &self.master_seed,
            &[
                b"request",
                &self.run_seed.to_be_bytes(),
                &(self.party as u64).to_be_bytes(),
                &instance.to_be_bytes(),
            ],
        )
    }
}

struct QueueEntry {
    due: u64,
    seq: u64,
    from: PartyId,
    to: PartyId,
    sent: u64,
    depth: u64,
    msg: Message,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due, self.seq).cmp(&(other.due, other.seq))
    }
}

enum Party {
    Honest(Box<Engine>),
    Byz(ByzParty),
}

/// Per-instance audit state under construction.
#[derive(Default)]
struct AuditBuilder {
    committee: Option<Vec<PartyId>>,
    order: Option<Vec<PartyId>>,
    /// candidate -> parties that possess its proven (payload, proof).
    holders: BTreeMap<PartyId, BTreeSet<PartyId>>,
    rec_complete: BTreeSet<PartyId>,
    spread_snapshot: Option<Vec<(PartyId, usize)>>,
    order_holdings: BTreeMap<PartyId, Vec<PartyId>>,
    good_set: Option<(Vec<PartyId>, Option<u64>)>,
    order_shares_honest: BTreeSet<PartyId>,
    order_share_snapshot: Option<usize>,
    zero_inputs: u64,
    zero_decided: BTreeSet<PartyId>,
    rounds: BTreeMap<PartyId, u64>,
    decisions: BTreeMap<PartyId, Decision>,
}

struct Runner {
    cfg: SysConfig,
    strategy: AdversaryStrategy,
    seed: u64,
    instances: u64,
    budget: u64,
    kit: CryptoKit,
    honest: BTreeSet<PartyId>,
    parties: Vec<Party>,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<QueueEntry>>,
    now: u64,
    seq: u64,
    clocks: Vec<BTreeMap<Instance, u64>>,
    metrics: Metrics,
    trace: TraceCollector,
    builders: BTreeMap<Instance, AuditBuilder>,
}

impl Runner {
    fn new(sim: Simulation) -> Self {
        let Simulation { cfg, opts, strategy, seed, instances, mode, budget } = sim;
        let kit = CryptoKit::new(&cfg);
        let keys = CryptoKit::keygen(&cfg);
        let honest: BTreeSet<PartyId> =
            (0..cfg.n).filter(|p| !strategy.byzantine.contains(p)).collect();
        let parties: Vec<Party> = keys
            .into_iter()
            .map(|key| {
                if strategy.byzantine.contains(&key.index) {
                    Party::Byz(ByzParty::spawn(strategy.behavior, &cfg, key))
                } else {
                    let requests = Box::new(SeededRequests {
                        master_seed: cfg.master_seed,
                        payload_len: cfg.payload_len,
                        party: key.index,
                        run_seed: seed,
                    });
                    Party::Honest(Box::new(Engine::new(cfg.clone(), opts, key, requests, instances)))
                }
            })
            .collect();
        let rng_seed = keyed_hash(32, &cfg.master_seed, &[b"simulation", &seed.to_be_bytes()]);
        let mut trace = TraceCollector::new(mode);
        trace.push(&TraceLine::Header {
            n: cfg.n,
            f: cfg.f,
            payload_len: cfg.payload_len,
            lambda: cfg.lambda,
            master_seed: hex::encode(cfg.master_seed),
            strategy: strategy.name.clone(),
            seed,
            instances,
        });
        let n = cfg.n;
        Runner {
            cfg,
            strategy,
            seed,
            instances,
            budget,
            kit,
            honest,
            parties,
            rng: ChaCha8Rng::from_seed(rng_seed.try_into().expect("32 bytes")),
            queue: BinaryHeap::new(),
            now: 0,
            seq: 0,
            clocks: vec![BTreeMap::new(); n],
            metrics: Metrics::default(),
            trace,
            builders: BTreeMap::new(),
        }
    }

    fn run(mut self) -> Result<RunReport, SimError> {
        for p in 0..self.cfg.n {
            let outs = match &mut self.parties[p] {
                Party::Honest(engine) => engine.start().out,
                Party::Byz(byz) => byz.start(),
            };
            for ob in outs {
                self.schedule(p, ob);
            }
        }
        while let Some(Reverse(entry)) = self.queue.pop() {
            if self.now >= self.budget {
                return Err(SimError::Runaway(self.now));
            }
            self.deliver(entry)?;
        }
        for p in self.honest.clone() {
            if let Party::Honest(engine) = &self.parties[p] {
                if !engine.done() {
                    let report: Vec<String> = self
                        .honest
                        .iter()
                        .filter_map(|&q| match &self.parties[q] {
                            Party::Honest(e) if !e.done() => Some(e.stall_info()),
                            _ => None,
                        })
                        .collect();
                    return Err(SimError::Stalled(report.join("; ")));
                }
            }
        }
        self.finalize()
    }

    fn deliver(&mut self, entry: QueueEntry) -> Result<(), SimError> {
        self.now += 1;
        let QueueEntry { due: _, seq: _, from, to, sent, depth, msg } = entry;
        let inst = msg.instance();
        let clock = self.clocks[to].entry(inst).or_insert(0);
        *clock = (*clock).max(depth);

        let cost = msg.wire_cost();
        let im = self.metrics.instance(inst);
        im.envelopes += 1;
        im.payload_bytes += cost.payload as u64;
        im.overhead_bytes += cost.overhead as u64;
        im.causal_depth = im.causal_depth.max(depth);
        *im.kinds.entry(msg.kind().to_string()).or_default() += 1;
        self.metrics.deliveries += 1;

        let (candidate, round, value) = match &msg {
            Message::AbbaVote { candidate, round, value, .. } => {
                (Some(*candidate), Some(*round), Some(*value))
            }
            Message::AbbaCommit { candidate, round, value, .. } => {
                (Some(*candidate), Some(*round), *value)
            }
            Message::AbbaDecide { candidate, round, value, .. } => {
                (Some(*candidate), Some(*round), Some(*value))
            }
            Message::Fetch { candidate, .. } | Message::Supply { candidate, .. } => {
                (Some(*candidate), None, None)
            }
            _ => (None, None, None),
        };
        self.trace.push(&TraceLine::Deliver {
            t: self.now,
            sent,
            from,
            to,
            kind: msg.kind().to_string(),
            bytes: cost.total() as u64,
            instance: inst,
            candidate,
            round,
            value,
        });

        // Possession tracking: whoever receives a proven (payload, proof)
        // pair holds it from now on.
        match &msg {
            Message::Propose { proposer, .. } | Message::Recommendation { proposer, .. } => {
                self.builders.entry(inst).or_default().holders.entry(*proposer).or_default().insert(to);
            }
            Message::Supply { candidate, .. } => {
                self.builders.entry(inst).or_default().holders.entry(*candidate).or_default().insert(to);
            }
            _ => {}
        }

        let (outs, notes) = match &mut self.parties[to] {
            Party::Honest(engine) => match engine.dispatch(from, msg) {
                Ok(output) => (output.out, output.notes),
                Err(e) => {
                    return Err(SimError::Violation(format!("party {to}: {e}")));
                }
            },
            Party::Byz(byz) => (byz.deliver(from, &msg), Vec::new()),
        };
        self.process_notes(to, notes)?;
        for ob in outs {
            self.schedule(to, ob);
        }
        Ok(())
    }

    fn schedule(&mut self, from: PartyId, ob: Outbound) {
        let inst = ob.msg.instance();
        let depth = self.clocks[from].get(&inst).copied().unwrap_or(0) + 1;

        // Send-side audit hooks: a proposer holds its own proven pair, and
        // ordering-share releases feed the unpredictability check.
        match &ob.msg {
            Message::Propose { proposer, .. } if *proposer == from => {
                self.builders.entry(inst).or_default().holders.entry(from).or_default().insert(from);
            }
            Message::PermShare { .. } if self.honest.contains(&from) => {
                let byz = self.strategy.byzantine.len();
                let threshold = self.cfg.high_threshold();
                let b = self.builders.entry(inst).or_default();
                b.order_shares_honest.insert(from);
                if b.order_share_snapshot.is_none() && byz + b.order_shares_honest.len() >= threshold {
                    b.order_share_snapshot = Some(b.order_shares_honest.len());
                }
            }
            _ => {}
        }

        let targets: Vec<PartyId> = match ob.to {
            Recipient::All => (0..self.cfg.n).collect(),
            Recipient::One(p) => vec![p],
        };
        for to in targets {
            let delay = self.strategy.scheduling.delay(&mut self.rng, &ob.msg);
            self.seq += 1;
            self.queue.push(Reverse(QueueEntry {
                due: self.now + delay,
                seq: self.seq,
                from,
                to,
                sent: self.now,
                depth,
                msg: ob.msg.clone(),
            }));
        }
    }

    fn process_notes(&mut self, p: PartyId, notes: Vec<EngineNote>) -> Result<(), SimError> {
        let honest_total = self.honest.len();
        for note in notes {
            match note {
                EngineNote::CommitteeSelected { instance, members } => {
                    let b = self.builders.entry(instance).or_default();
                    match &b.committee {
                        None => b.committee = Some(members),
                        Some(prev) if *prev == members => {}
                        Some(prev) => {
                            return Err(SimError::Violation(format!(
                                "instance {instance}: committee mismatch {prev:?} vs {members:?}"
                            )))
                        }
                    }
                }
                EngineNote::BroadcastProven { instance } => {
                    self.builders.entry(instance).or_default().holders.entry(p).or_default().insert(p);
                }
                EngineNote::Equivocation { instance, .. } => {
                    self.metrics.instance(instance).equivocations += 1;
                }
                EngineNote::RecommendComplete { instance, .. } => {
                    let b = self.builders.entry(instance).or_default();
                    b.rec_complete.insert(p);
                    if b.rec_complete.len() == honest_total && b.spread_snapshot.is_none() {
                        let committee = b.committee.clone().unwrap_or_default();
                        let holders: Vec<(PartyId, usize)> = committee
                            .iter()
                            .map(|c| (*c, b.holders.get(c).map(BTreeSet::len).unwrap_or(0)))
                            .collect();
                        let max = holders.iter().map(|(_, h)| *h).max().unwrap_or(0);
                        b.spread_snapshot = Some(holders.clone());
                        self.trace.push(&TraceLine::Spread {
                            t: self.now,
                            instance,
                            holders,
                            max_holders: max,
                        });
                    }
                }
                EngineNote::OrderFixed { instance, order, holdings } => {
                    let b = self.builders.entry(instance).or_default();
                    match &b.order {
                        None => b.order = Some(order.clone()),
                        Some(prev) if *prev == order => {}
                        Some(prev) => {
                            return Err(SimError::Violation(format!(
                                "instance {instance}: order mismatch {prev:?} vs {order:?}"
                            )))
                        }
                    }
                    b.order_holdings.insert(p, holdings);
                    if b.order_holdings.len() == honest_total && b.good_set.is_none() {
                        let committee = b.committee.clone().unwrap_or_default();
                        let threshold = self.cfg.low_threshold();
                        let members: Vec<PartyId> = committee
                            .iter()
                            .filter(|c| {
                                b.order_holdings.values().filter(|h| h.contains(c)).count() >= threshold
                            })
                            .copied()
                            .collect();
                        let order = b.order.clone().expect("just set");
                        let first_hit = order
                            .iter()
                            .position(|c| members.contains(c))
                            .map(|i| i as u64 + 1);
                        b.good_set = Some((members.clone(), first_hit));
                        self.trace.push(&TraceLine::GoodSet {
                            t: self.now,
                            instance,
                            order,
                            members,
                            first_hit,
                        });
                    }
                }
                EngineNote::InputCast { instance, value, .. } => {
                    if !value {
                        self.builders.entry(instance).or_default().zero_inputs += 1;
                    }
                }
                EngineNote::ZeroDecided { instance, candidate, round, .. } => {
                    let b = self.builders.entry(instance).or_default();
                    b.zero_decided.insert(candidate);
                    let r = b.rounds.entry(candidate).or_default();
                    *r = (*r).max(round);
                }
                EngineNote::OneDecided { instance, candidate, round, .. } => {
                    let b = self.builders.entry(instance).or_default();
                    let r = b.rounds.entry(candidate).or_default();
                    *r = (*r).max(round);
                }
                EngineNote::FetchStarted { instance, .. } => {
                    self.metrics.instance(instance).fetches += 1;
                }
                EngineNote::Decided { decision } => {
                    self.builders.entry(decision.instance).or_default().decisions.insert(p, decision);
                }
                EngineNote::Dropped { reason, .. } => {
                    *self.metrics.drops.entry(reason).or_default() += 1;
                }
            }
        }
        Ok(())
    }

    fn finalize(mut self) -> Result<RunReport, SimError> {
        let honest_total = self.honest.len();
        let mut audits = Vec::new();
        for inst in 1..=self.instances {
            let b = self
                .builders
                .remove(&inst)
                .ok_or_else(|| SimError::Violation(format!("instance {inst}: no activity recorded")))?;
            if b.decisions.len() != honest_total {
                return Err(SimError::Violation(format!(
                    "instance {inst}: {} of {honest_total} honest parties decided",
                    b.decisions.len()
                )));
            }
            let reference = b.decisions.values().next().expect("nonempty").clone();
            for (party, d) in &b.decisions {
                if d.candidate != reference.candidate
                    || d.payload != reference.payload
                    || d.proof != reference.proof
                    || d.iterations != reference.iterations
                {
                    return Err(SimError::Violation(format!(
                        "instance {inst}: party {party} decided {:?}/iter {} against {:?}/iter {}",
                        d.candidate, d.iterations, reference.candidate, reference.iterations
                    )));
                }
            }
            let committee = b
                .committee
                .clone()
                .ok_or_else(|| SimError::Violation(format!("instance {inst}: committee never fixed")))?;
            if !committee.contains(&reference.candidate) {
                return Err(SimError::Violation(format!(
                    "instance {inst}: decided candidate {} outside committee {committee:?}",
                    reference.candidate
                )));
            }
            let tag = vcbc_tag(inst, reference.candidate);
            let digest = self.kit.proposal_digest(&tag, &reference.payload);
            if !self.kit.proof_verify(&tag, &digest, &reference.proof) {
                return Err(SimError::Violation(format!(
                    "instance {inst}: decision carries a proof that does not verify"
                )));
            }
            let order = b
                .order
                .clone()
                .ok_or_else(|| SimError::Violation(format!("instance {inst}: order never fixed")))?;
            let (good_set, first_hit) = b.good_set.clone().unwrap_or((Vec::new(), None));
            let spread = b.spread_snapshot.clone().unwrap_or_default();
            let max_holders = spread.iter().map(|(_, h)| *h).max().unwrap_or(0);
            self.trace.push(&TraceLine::Decision {
                t: self.now,
                instance: inst,
                candidate: reference.candidate,
                iterations: reference.iterations,
                payload_digest: hex::encode(&digest),
                payload_len: reference.payload.len(),
            });
            audits.push(InstanceAudit {
                instance: inst,
                committee,
                order,
                good_set,
                first_hit,
                iterations: reference.iterations,
                decided_candidate: reference.candidate,
                rounds: b.rounds,
                holders_at_spread_done: spread,
                max_holders_at_spread_done: max_holders,
                honest_order_shares_before_combinable: b.order_share_snapshot.unwrap_or(0),
                honest_zero_inputs: b.zero_inputs,
                zero_decided: b.zero_decided.into_iter().collect(),
            });
        }

        self.trace.push(&TraceLine::Metrics {
            t: self.now,
            metrics: self.metrics.clone(),
            audits: audits.clone(),
        });
        let (trace_hash, trace_lines) = self.trace.finish();
        let mut decisions = BTreeMap::new();
        for &p in &self.honest {
            if let Party::Honest(engine) = &self.parties[p] {
                decisions.insert(p, engine.decisions().to_vec());
            }
        }
        Ok(RunReport {
            strategy: self.strategy.name,
            seed: self.seed,
            instances: self.instances,
            deliveries: self.now,
            trace_hash,
            trace: trace_lines,
            metrics: self.metrics,
            audits,
            decisions,
        })
    }
}

/// Re-run a trace header's parameters and compare hashes.
pub fn replay_check(lines: &[TraceLine], opts: &ProtocolOptions) -> Result<RunReport, SimError> {
    let Some(TraceLine::Header { n, f, payload_len, lambda, master_seed, strategy, seed, instances }) =
        lines.first()
    else {
        return Err(SimError::Violation("trace has no header line".into()));
    };
    let mut master = [0u8; 32];
    let bytes = hex::decode(master_seed)
        .map_err(|e| SimError::Violation(format!("bad master seed in header: {e}")))?;
    if bytes.len() != 32 {
        return Err(SimError::Violation("master seed must be 32 bytes".into()));
    }
    master.copy_from_slice(&bytes);
    let cfg = SysConfig::new(*n, *f, *payload_len, *lambda, master)
        .map_err(|e| SimError::Violation(format!("header configuration rejected: {e}")))?;
    let strat = strategy_by_name(&cfg, strategy)
        .ok_or_else(|| SimError::Violation(format!("unknown strategy {strategy:?} in header")))?;
    Simulation::new(cfg, strat, *seed, *instances).options(*opts).trace_mode(TraceMode::Full).run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_honest_run_decides() {
        let cfg = SysConfig::new(4, 1, 32, 32, [1u8; 32]).unwrap();
        let strategy = strategy_by_name(&cfg, "honest_random").unwrap();
        let report = run_simulation(&cfg, &strategy, 7, 1, TraceMode::Hash).unwrap();
        assert_eq!(report.decisions.len(), 4);
        for d in report.decisions.values() {
            assert_eq!(d.len(), 1);
            assert_eq!(d[0].instance, 1);
        }
        assert_eq!(report.audits.len(), 1);
        let audit = &report.audits[0];
        assert!(audit.iterations >= 1);
        assert!(audit.committee.contains(&audit.decided_candidate));
        assert!(report.metrics.total_envelopes() > 0);
    }

    #[test]
    fn identical_runs_hash_identically() {
        let cfg = SysConfig::new(4, 1, 32, 32, [2u8; 32]).unwrap();
        let strategy = strategy_by_name(&cfg, "honest_random").unwrap();
        let a = run_simulation(&cfg, &strategy, 3, 1, TraceMode::Hash).unwrap();
        let b = run_simulation(&cfg, &strategy, 3, 1, TraceMode::Hash).unwrap();
        let c = run_simulation(&cfg, &strategy, 4, 1, TraceMode::Hash).unwrap();
        assert_eq!(a.trace_hash, b.trace_hash);
        assert_ne!(a.trace_hash, c.trace_hash);
    }
}
