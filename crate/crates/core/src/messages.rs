//! Protocol messages and their byte accounting.
//!
//! Everything a party sends is one [`Message`]. The simulator wraps each
//! one in an envelope with a fixed 16-byte header; the body cost is the
//! sum of the fields below, with variable-length byte strings carrying a
//! 4-byte length prefix. Proposal payload bytes are accounted separately
//! from everything else so experiments can split traffic into an `l`-part
//! and a `lambda`-part.

use crate::crypto::{CoinShare, Proof, RandomSeed, SigShare};
use crate::{Instance, PartyId};
use serde::{Deserialize, Serialize};

/// What entitles a binary-agreement vote to its value. Round-1 votes are
/// inputs; later votes must show how the previous round ended for their
/// sender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoteBasis {
    /// Round 1: the sender's own input.
    Input,
    /// The previous round produced a commit for this value; the proof
    /// covers a quorum of votes for it there.
    Carried(Proof),
    /// The previous round stood off (proof over a quorum of abstain
    /// commits) and the vote follows that round's coin. `seed` is the
    /// tossed coin on threshold rounds, absent on fixed ones.
    Standoff { proof: Proof, seed: Option<RandomSeed> },
}

/// Addressing of an outbound message. Broadcasts are expanded by the
/// simulator into `n` point-to-point envelopes, self-delivery included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    All,
    One(PartyId),
}

/// A message together with where it should go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: Recipient,
    pub msg: Message,
}

impl Outbound {
    pub fn all(msg: Message) -> Self {
        Outbound { to: Recipient::All, msg }
    }

    pub fn one(to: PartyId, msg: Message) -> Self {
        Outbound { to: Recipient::One(to), msg }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    /// Coin share for committee selection.
    CsShare { instance: Instance, share: CoinShare },
    /// Consistent-broadcast payload from a committee member.
    VcbcSend { instance: Instance, proposer: PartyId, payload: Vec<u8> },
    /// Signed echo back to the proposer; the signed digest rides inside
    /// the share.
    VcbcEcho { instance: Instance, proposer: PartyId, share: SigShare },
    /// A proposal together with its broadcast proof.
    Propose { instance: Instance, proposer: PartyId, payload: Vec<u8>, proof: Proof },
    /// Re-multicast of a proven proposal.
    Recommendation { instance: Instance, proposer: PartyId, payload: Vec<u8>, proof: Proof },
    /// Coin share for the candidate-ordering permutation.
    PermShare { instance: Instance, share: CoinShare },
    /// Binary-agreement vote: one value per sender per round, carrying a
    /// signature share over the round/value statement (commit evidence is
    /// combined from these) and the basis entitling the sender to the
    /// value. `justification` is the candidate's broadcast proof and must
    /// verify when `value` is true.
    AbbaVote {
        instance: Instance,
        candidate: PartyId,
        round: u64,
        value: bool,
        share: SigShare,
        basis: VoteBasis,
        justification: Option<Proof>,
    },
    /// Binary-agreement commit for one round: the value a quorum of votes
    /// settled on, or `None` to abstain when the votes were mixed. A value
    /// commit carries the combined vote proof as `evidence`, and a commit
    /// for 1 repeats the candidate justification. Every commit signs its
    /// own statement (decision evidence is combined from these) and, on
    /// rounds that flip a real coin, a coin share rides along.
    AbbaCommit {
        instance: Instance,
        candidate: PartyId,
        round: u64,
        value: Option<bool>,
        share: SigShare,
        evidence: Option<Proof>,
        justification: Option<Proof>,
        coin_share: Option<CoinShare>,
    },
    /// Terminal broadcast of a binary-agreement decision, carrying enough
    /// evidence for any receiver to decide immediately: a threshold proof
    /// over commits for `value` in `round`, plus the candidate
    /// justification when `value` is true.
    AbbaDecide {
        instance: Instance,
        candidate: PartyId,
        round: u64,
        value: bool,
        evidence: Proof,
        justification: Option<Proof>,
    },
    /// Request for a decided proposal this party never received.
    Fetch { instance: Instance, candidate: PartyId },
    /// Answer to [`Message::Fetch`].
    Supply { instance: Instance, candidate: PartyId, payload: Vec<u8>, proof: Proof },
}

/// Body size split into proposal-payload bytes and everything else.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WireCost {
    pub payload: usize,
    pub overhead: usize,
}

impl WireCost {
    pub fn total(&self) -> usize {
        self.payload + self.overhead
    }
}

/// Fixed envelope header: sender, receiver, kind, sequence.
pub const HEADER_BYTES: usize = 16;

fn bytes_cost(b: &[u8]) -> usize {
    4 + b.len()
}

fn coin_share_cost(s: &CoinShare) -> usize {
    bytes_cost(s.tag.as_bytes()) + 8 + bytes_cost(&s.bytes)
}

fn sig_share_cost(s: &SigShare) -> usize {
    bytes_cost(s.tag.as_bytes()) + bytes_cost(&s.digest) + 8 + bytes_cost(&s.bytes)
}

fn proof_cost(p: &Proof) -> usize {
    bytes_cost(p.tag.as_bytes()) + bytes_cost(&p.digest) + bytes_cost(&p.sig)
}

fn seed_cost(s: &RandomSeed) -> usize {
    bytes_cost(s.tag.as_bytes()) + bytes_cost(&s.bytes)
}

impl Message {
    pub fn instance(&self) -> Instance {
        match self {
            Message::CsShare { instance, .. }
            | Message::VcbcSend { instance, .. }
            | Message::VcbcEcho { instance, .. }
            | Message::Propose { instance, .. }
            | Message::Recommendation { instance, .. }
            | Message::PermShare { instance, .. }
            | Message::AbbaVote { instance, .. }
            | Message::AbbaCommit { instance, .. }
            | Message::AbbaDecide { instance, .. }
            | Message::Fetch { instance, .. }
            | Message::Supply { instance, .. } => *instance,
        }
    }

    /// Stable kind label used in traces and drop counters.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::CsShare { .. } => "CS_SHARE",
            Message::VcbcSend { .. } => "VCBC_SEND",
            Message::VcbcEcho { .. } => "VCBC_ECHO",
            Message::Propose { .. } => "PROPOSE",
            Message::Recommendation { .. } => "RECOMMENDATION",
            Message::PermShare { .. } => "PERM_SHARE",
            Message::AbbaVote { .. } => "ABBA_VOTE",
            Message::AbbaCommit { .. } => "ABBA_COMMIT",
            Message::AbbaDecide { .. } => "ABBA_DECIDE",
            Message::Fetch { .. } => "FETCH",
            Message::Supply { .. } => "SUPPLY",
        }
    }

    /// Body cost in bytes, split payload/overhead. The envelope header is
    /// not included (see [`HEADER_BYTES`]).
    pub fn wire_cost(&self) -> WireCost {
        let mut c = WireCost::default();
        // instance number
        c.overhead += 8;
        match self {
            Message::CsShare { share, .. } | Message::PermShare { share, .. } => {
                c.overhead += coin_share_cost(share);
            }
            Message::VcbcSend { payload, .. } => {
                c.overhead += 8 + 4;
                c.payload += payload.len();
            }
            Message::VcbcEcho { share, .. } => {
                c.overhead += 8 + sig_share_cost(share);
            }
            Message::Propose { payload, proof, .. }
            | Message::Recommendation { payload, proof, .. }
            | Message::Supply { payload, proof, .. } => {
                c.overhead += 8 + 4 + proof_cost(proof);
                c.payload += payload.len();
            }
            Message::AbbaVote { share, basis, justification, .. } => {
                c.overhead += 8 + 8 + 1 + 1 + 1 + sig_share_cost(share);
                match basis {
                    VoteBasis::Input => {}
                    VoteBasis::Carried(p) => c.overhead += proof_cost(p),
                    VoteBasis::Standoff { proof, seed } => {
                        c.overhead += 1 + proof_cost(proof);
                        if let Some(s) = seed {
                            c.overhead += seed_cost(s);
                        }
                    }
                }
                if let Some(p) = justification {
                    c.overhead += proof_cost(p);
                }
            }
            Message::AbbaCommit { share, evidence, justification, coin_share, .. } => {
                c.overhead += 8 + 8 + 2 + 3 + sig_share_cost(share);
                if let Some(p) = evidence {
                    c.overhead += proof_cost(p);
                }
                if let Some(p) = justification {
                    c.overhead += proof_cost(p);
                }
                if let Some(s) = coin_share {
                    c.overhead += coin_share_cost(s);
                }
            }
            Message::AbbaDecide { evidence, justification, .. } => {
                c.overhead += 8 + 8 + 1 + 1 + proof_cost(evidence);
                if let Some(p) = justification {
                    c.overhead += proof_cost(p);
                }
            }
            Message::Fetch { .. } => {
                c.overhead += 8;
            }
        }
        c
    }
}
