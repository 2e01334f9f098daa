//! Adversary strategies: who is corrupt, how they behave, and how the
//! network reorders traffic.
//!
//! A strategy is plain data so runs are reproducible from the trace
//! header. The built-in roster covers the cases the experiment claims are
//! about: fully honest baselines, silent corruptions inside and outside
//! the committee, partial responsiveness, an equivocating proposer, and a
//! scheduler that starves all but one committee member's proposal to
//! force the candidate scan long.

use crate::committee::select_committee;
use crate::config::SysConfig;
use crate::crypto::{cs_tag, perm_tag, CoinShare, CryptoKit, PartyKey, Proof, SigShare};
use crate::messages::{Message, Outbound, Recipient};
use crate::permutation::order_candidates;
use crate::pvcbc::VcbcReceiver;
use crate::{Instance, PartyId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// How the network assigns delivery delays, in logical ticks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scheduling {
    /// Every envelope gets an independent delay in `1..=max_delay`.
    Uniform { max_delay: u64 },
    /// Proposal-carrying envelopes from `delayed` proposers are pushed
    /// far into the future; everything else is as Uniform{16}.
    DelayProposals { delayed: BTreeSet<PartyId>, delay: u64 },
}

impl Scheduling {
    pub fn delay(&self, rng: &mut ChaCha8Rng, msg: &Message) -> u64 {
        match self {
            Scheduling::Uniform { max_delay } => rng.gen_range(1..=*max_delay),
            Scheduling::DelayProposals { delayed, delay } => {
                let targeted = match msg {
                    Message::VcbcSend { proposer, .. }
                    | Message::Propose { proposer, .. }
                    | Message::Recommendation { proposer, .. } => delayed.contains(proposer),
                    _ => false,
                };
                let base = rng.gen_range(1..=16);
                if targeted {
                    delay + base
                } else {
                    base
                }
            }
        }
    }
}

/// What corrupted parties do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    /// No corruption (the byzantine set must be empty).
    Passive,
    /// Corrupted parties never send anything.
    Silent,
    /// Corrupted parties run the first instance's broadcast with two
    /// different payloads, one per half of the network, and otherwise
    /// participate just enough to keep the split alive.
    Equivocate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryStrategy {
    pub name: String,
    pub byzantine: BTreeSet<PartyId>,
    pub scheduling: Scheduling,
    pub behavior: Behavior,
}

/// Committee of an instance as a function of configuration only; used by
/// strategy constructors to aim corruptions, and legitimate because the
/// simulator owns every key anyway.
pub fn predict_committee(cfg: &SysConfig, instance: Instance) -> Vec<PartyId> {
    let kit = CryptoKit::new(cfg);
    let keys = CryptoKit::keygen(cfg);
    let tag = cs_tag(instance);
    let shares: Vec<CoinShare> =
        keys.iter().take(cfg.low_threshold()).map(|k| k.coin_share(&tag)).collect();
    let seed = kit.coin_toss(&tag, &shares, cfg.low_threshold()).expect("enough shares");
    select_committee(&seed, cfg.n, cfg.committee_size())
}

/// Candidate order of an instance, same caveat as [`predict_committee`].
pub fn predict_order(cfg: &SysConfig, instance: Instance) -> Vec<PartyId> {
    let committee = predict_committee(cfg, instance);
    let kit = CryptoKit::new(cfg);
    let keys = CryptoKit::keygen(cfg);
    let tag = perm_tag(instance);
    let shares: Vec<CoinShare> =
        keys.iter().take(cfg.high_threshold()).map(|k| k.coin_share(&tag)).collect();
    let seed = kit.coin_toss(&tag, &shares, cfg.high_threshold()).expect("enough shares");
    order_candidates(&seed, &committee)
}

pub const BUILTIN_NAMES: &[&str] = &[
    "honest_random",
    "scenario1_silent_committee",
    "scenario2_silent_outsiders",
    "scenario3_all_responsive",
    "scenario4_partial",
    "equivocator",
    "worst_order",
];

/// Resolve a strategy by name. `scenario4_partial` takes optional
/// parameters as `scenario4_partial:t=1,m=9` (t = responsive committee
/// members, m = responsive parties in total).
pub fn strategy_by_name(cfg: &SysConfig, name: &str) -> Option<AdversaryStrategy> {
    let uniform = Scheduling::Uniform { max_delay: 16 };
    match name {
        "honest_random" => Some(AdversaryStrategy {
            name: name.into(),
            byzantine: BTreeSet::new(),
            scheduling: uniform,
            behavior: Behavior::Passive,
        }),
        "scenario1_silent_committee" => {
            let committee = predict_committee(cfg, 1);
            Some(AdversaryStrategy {
                name: name.into(),
                byzantine: committee.into_iter().take(cfg.f).collect(),
                scheduling: uniform,
                behavior: Behavior::Silent,
            })
        }
        "scenario2_silent_outsiders" => {
            let committee = predict_committee(cfg, 1);
            let byzantine =
                (0..cfg.n).filter(|p| !committee.contains(p)).take(cfg.f).collect();
            Some(AdversaryStrategy {
                name: name.into(),
                byzantine,
                scheduling: uniform,
                behavior: Behavior::Silent,
            })
        }
        "scenario3_all_responsive" => Some(AdversaryStrategy {
            name: name.into(),
            byzantine: BTreeSet::new(),
            scheduling: Scheduling::Uniform { max_delay: 64 },
            behavior: Behavior::Passive,
        }),
        "equivocator" => {
            let committee = predict_committee(cfg, 1);
            Some(AdversaryStrategy {
                name: name.into(),
                byzantine: [committee[0]].into(),
                scheduling: uniform,
                behavior: Behavior::Equivocate,
            })
        }
        "worst_order" => {
            let committee = predict_committee(cfg, 1);
            let keep = *committee.iter().min().expect("nonempty committee");
            let delayed = committee.into_iter().filter(|&m| m != keep).collect();
            Some(AdversaryStrategy {
                name: name.into(),
                byzantine: BTreeSet::new(),
                scheduling: Scheduling::DelayProposals { delayed, delay: 1_000_000 },
                behavior: Behavior::Passive,
            })
        }
        _ => scenario4(cfg, name),
    }
}

/// `scenario4_partial`: t of the committee and m of the whole network stay
/// responsive, the rest are silent. Needs `n - m <= f` corruptions and at
/// least `f + 1 - t` of them inside the committee.
fn scenario4(cfg: &SysConfig, name: &str) -> Option<AdversaryStrategy> {
    let rest = name.strip_prefix("scenario4_partial")?;
    let mut t = 1usize;
    let mut m = cfg.quorum();
    if let Some(params) = rest.strip_prefix(':') {
        for part in params.split(',') {
            let (key, val) = part.split_once('=')?;
            let val: usize = val.parse().ok()?;
            match key {
                "t" => t = val,
                "m" => m = val,
                _ => return None,
            }
        }
    } else if !rest.is_empty() {
        return None;
    }
    let members = cfg.committee_size();
    if t < 1 || t > members || m > cfg.n {
        return None;
    }
    let silent_total = cfg.n - m;
    let silent_members = members - t;
    if silent_total > cfg.f || silent_members > silent_total {
        return None;
    }
    let committee = predict_committee(cfg, 1);
    let mut byzantine: BTreeSet<PartyId> = committee.iter().rev().take(silent_members).copied().collect();
    for p in 0..cfg.n {
        if byzantine.len() >= silent_total {
            break;
        }
        if !committee.contains(&p) {
            byzantine.insert(p);
        }
    }
    Some(AdversaryStrategy {
        name: format!("scenario4_partial:t={t},m={m}"),
        byzantine,
        scheduling: Scheduling::Uniform { max_delay: 16 },
        behavior: Behavior::Silent,
    })
}

/// Runtime standing in for a corrupted party inside the simulator.
pub(crate) enum ByzParty {
    Silent,
    Equivocate(Box<EquivocateState>),
}

impl ByzParty {
    pub fn spawn(behavior: Behavior, cfg: &SysConfig, key: PartyKey) -> ByzParty {
        match behavior {
            Behavior::Silent | Behavior::Passive => ByzParty::Silent,
            Behavior::Equivocate => ByzParty::Equivocate(Box::new(EquivocateState::new(cfg, key))),
        }
    }

    pub fn start(&mut self) -> Vec<Outbound> {
        match self {
            ByzParty::Silent => Vec::new(),
            ByzParty::Equivocate(st) => st.start(),
        }
    }

    pub fn deliver(&mut self, from: PartyId, msg: &Message) -> Vec<Outbound> {
        match self {
            ByzParty::Silent => Vec::new(),
            ByzParty::Equivocate(st) => st.deliver(from, msg),
        }
    }
}

/// A proposer that, if selected in instance 1, broadcasts payload A to the
/// lower half of the parties and payload B to the upper half, then tries
/// to prove whichever side echoes first. The sign-once rule at honest
/// receivers caps it at one proof; the point is to let the consistency
/// tests watch it fail to get two.
pub(crate) struct EquivocateState {
    cfg: SysConfig,
    kit: CryptoKit,
    key: PartyKey,
    me: PartyId,
    cs_shares: BTreeMap<PartyId, CoinShare>,
    committee: Option<Vec<PartyId>>,
    payload_low: Vec<u8>,
    payload_high: Vec<u8>,
    digest_low: Vec<u8>,
    digest_high: Vec<u8>,
    echoes_low: BTreeMap<PartyId, SigShare>,
    echoes_high: BTreeMap<PartyId, SigShare>,
    proposed: bool,
    rx: VcbcReceiver,
}

impl EquivocateState {
    fn new(cfg: &SysConfig, key: PartyKey) -> Self {
        let kit = CryptoKit::new(cfg);
        let me = key.index;
        let payload_low = vec![0xAA; cfg.payload_len];
        let payload_high = vec![0xBB; cfg.payload_len];
        let tag = crate::crypto::vcbc_tag(1, me);
        let digest_low = kit.proposal_digest(&tag, &payload_low);
        let digest_high = kit.proposal_digest(&tag, &payload_high);
        EquivocateState {
            cfg: cfg.clone(),
            kit,
            key,
            me,
            cs_shares: BTreeMap::new(),
            committee: None,
            payload_low,
            payload_high,
            digest_low,
            digest_high,
            echoes_low: BTreeMap::new(),
            echoes_high: BTreeMap::new(),
            proposed: false,
            rx: VcbcReceiver::new(1),
        }
    }

    fn start(&mut self) -> Vec<Outbound> {
        vec![
            Outbound::all(Message::CsShare { instance: 1, share: self.key.coin_share(&cs_tag(1)) }),
            Outbound::all(Message::PermShare { instance: 1, share: self.key.coin_share(&perm_tag(1)) }),
        ]
    }

    fn deliver(&mut self, from: PartyId, msg: &Message) -> Vec<Outbound> {
        if msg.instance() != 1 {
            return Vec::new();
        }
        match msg {
            Message::CsShare { share, .. } => self.on_cs_share(from, share.clone()),
            Message::VcbcSend { proposer, payload, .. } => self.echo_back(*proposer, payload),
            Message::VcbcEcho { proposer, share, .. } if *proposer == self.me => {
                self.on_echo(from, share.clone())
            }
            _ => Vec::new(),
        }
    }

    fn on_cs_share(&mut self, from: PartyId, share: CoinShare) -> Vec<Outbound> {
        if self.committee.is_some() || !self.kit.coin_share_verify(&cs_tag(1), &share) {
            return Vec::new();
        }
        self.cs_shares.insert(from, share);
        if self.cs_shares.len() < self.cfg.low_threshold() {
            return Vec::new();
        }
        let shares: Vec<CoinShare> = self.cs_shares.values().cloned().collect();
        let seed = self.kit.coin_toss(&cs_tag(1), &shares, self.cfg.low_threshold()).expect("threshold");
        let committee = select_committee(&seed, self.cfg.n, self.cfg.committee_size());
        let selected = committee.contains(&self.me);
        self.committee = Some(committee);
        if !selected {
            return Vec::new();
        }
        let half = self.cfg.n / 2;
        (0..self.cfg.n)
            .map(|p| {
                let payload =
                    if p < half { self.payload_low.clone() } else { self.payload_high.clone() };
                Outbound {
                    to: Recipient::One(p),
                    msg: Message::VcbcSend { instance: 1, proposer: self.me, payload },
                }
            })
            .collect()
    }

    fn echo_back(&mut self, proposer: PartyId, payload: &[u8]) -> Vec<Outbound> {
        match self.rx.on_send(&self.kit, &self.key, proposer, payload) {
            Ok(Some(echo)) => vec![echo],
            _ => Vec::new(),
        }
    }

    fn on_echo(&mut self, from: PartyId, share: SigShare) -> Vec<Outbound> {
        if self.proposed || share.issuer != from {
            return Vec::new();
        }
        let tag = crate::crypto::vcbc_tag(1, self.me);
        let (digest, payload, store) = if share.digest == self.digest_low {
            (&self.digest_low, &self.payload_low, &mut self.echoes_low)
        } else if share.digest == self.digest_high {
            (&self.digest_high, &self.payload_high, &mut self.echoes_high)
        } else {
            return Vec::new();
        };
        if !self.kit.sig_share_verify(&tag, digest, &share) {
            return Vec::new();
        }
        store.insert(from, share);
        if store.len() < self.cfg.high_threshold() {
            return Vec::new();
        }
        let shares: Vec<SigShare> = store.values().cloned().collect();
        let proof: Proof = self
            .kit
            .sig_combine(&tag, digest, &shares, self.cfg.high_threshold())
            .expect("threshold met");
        self.proposed = true;
        vec![Outbound::all(Message::Propose {
            instance: 1,
            proposer: self.me,
            payload: payload.clone(),
            proof,
        })]
    }
}
