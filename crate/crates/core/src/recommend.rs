//! Proposal spreading: proven proposals are relayed until enough parties
//! have spoken.
//!
//! A party that sees its first proven committee proposal endorses it with a
//! RECOMMENDATION multicast (committee members effectively endorse their
//! own, since self-delivery of the PROPOSE arrives first). The phase
//! settles once `n - f` distinct parties have endorsed something: at that
//! point at least `n - 2f >= f + 1` honest endorsements exist, and since
//! each endorsement carries the full (payload, proof) pair, some committee
//! proposal is now held by enough honest parties that it can never be lost.

use crate::config::{ProtocolOptions, SysConfig};
use crate::crypto::{vcbc_tag, CryptoKit, Proof};
use crate::messages::{Message, Outbound};
use crate::{Instance, PartyId};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecError {
    #[error("proposer is not a committee member")]
    NotCommittee,
    #[error("proof does not cover this proposer and payload")]
    BadProof,
}

/// What a delivery did to the state.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct RecUpdate {
    /// RECOMMENDATION multicast to emit, if this delivery triggered one.
    pub endorse: Option<Outbound>,
    /// Set when this delivery brought the sender count to `n - f`.
    pub completed: bool,
    /// Set when the (proposer, payload, proof) entry was stored for the
    /// first time.
    pub new_entry: bool,
}

/// Per-instance record of proven proposals and who endorsed any of them.
#[derive(Debug)]
pub struct RecommendState {
    instance: Instance,
    entries: BTreeMap<PartyId, (Vec<u8>, Proof)>,
    senders: BTreeSet<PartyId>,
    endorsed: BTreeSet<PartyId>,
    complete: bool,
}

impl RecommendState {
    pub fn new(instance: Instance) -> Self {
        RecommendState {
            instance,
            entries: BTreeMap::new(),
            senders: BTreeSet::new(),
            endorsed: BTreeSet::new(),
            complete: false,
        }
    }

    pub fn complete(&self) -> bool {
        self.complete
    }

    pub fn entry(&self, proposer: PartyId) -> Option<&(Vec<u8>, Proof)> {
        self.entries.get(&proposer)
    }

    pub fn proposers(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.entries.keys().copied()
    }

    pub fn sender_count(&self) -> usize {
        self.senders.len()
    }

    /// Feed one proven proposal, from either a PROPOSE (`endorsement =
    /// false`) or a RECOMMENDATION (`endorsement = true`). `sender` is the
    /// party the envelope came from, `proposer` the committee member whose
    /// payload it carries.
    ///
    /// Verification happens here so everything stored in `entries` is known
    /// proven. Entries are write-once; a second valid pair for the same
    /// proposer must carry the identical digest (broadcast consistency), so
    /// first-write-wins loses nothing.
    #[allow(clippy::too_many_arguments)]
    pub fn on_proven(
        &mut self,
        kit: &CryptoKit,
        cfg: &SysConfig,
        opts: &ProtocolOptions,
        committee: &[PartyId],
        sender: PartyId,
        proposer: PartyId,
        payload: &[u8],
        proof: &Proof,
        endorsement: bool,
    ) -> Result<RecUpdate, RecError> {
        if !committee.contains(&proposer) {
            return Err(RecError::NotCommittee);
        }
        let tag = vcbc_tag(self.instance, proposer);
        let digest = kit.proposal_digest(&tag, payload);
        if !kit.proof_verify(&tag, &digest, proof) {
            return Err(RecError::BadProof);
        }

        let mut update = RecUpdate::default();
        self.entries.entry(proposer).or_insert_with(|| {
            update.new_entry = true;
            (payload.to_vec(), proof.clone())
        });
        if endorsement
            && self.senders.insert(sender)
            && !self.complete
            && self.senders.len() >= cfg.quorum()
        {
            self.complete = true;
            update.completed = true;
        }

        // Endorse the first proven proposal we see; in per-candidate mode,
        // every distinct one. Endorsing stays on after completion so late
        // proposals still spread, but each is endorsed at most once.
        let endorse_this = if opts.recommend_per_candidate {
            !self.endorsed.contains(&proposer)
        } else {
            self.endorsed.is_empty()
        };
        if endorse_this {
            self.endorsed.insert(proposer);
            update.endorse = Some(Outbound::all(Message::Recommendation {
                instance: self.instance,
                proposer,
                payload: payload.to_vec(),
                proof: proof.clone(),
            }));
        }
        Ok(update)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{CryptoKit, PartyKey};

    fn setup(n: usize, f: usize) -> (SysConfig, CryptoKit, Vec<PartyKey>) {
        let cfg = SysConfig::new(n, f, 8, 32, [11u8; 32]).unwrap();
        let kit = CryptoKit::new(&cfg);
        let keys = CryptoKit::keygen(&cfg);
        (cfg, kit, keys)
    }

    fn proven(kit: &CryptoKit, keys: &[PartyKey], cfg: &SysConfig, proposer: PartyId, payload: &[u8]) -> Proof {
        let tag = vcbc_tag(1, proposer);
        let digest = kit.proposal_digest(&tag, payload);
        let shares: Vec<_> = keys.iter().map(|k| k.sig_share(&tag, &digest)).collect();
        kit.sig_combine(&tag, &digest, &shares, cfg.high_threshold()).unwrap()
    }

    #[test]
    fn first_proposal_is_endorsed_and_quorum_completes() {
        let (cfg, kit, keys) = setup(4, 1);
        let opts = ProtocolOptions::default();
        let committee = vec![0, 1];
        let proof = proven(&kit, &keys, &cfg, 0, b"aa");
        let mut st = RecommendState::new(1);

        let up = st
            .on_proven(&kit, &cfg, &opts, &committee, 0, 0, b"aa", &proof, false)
            .unwrap();
        assert!(up.endorse.is_some(), "first proven proposal triggers an endorsement");
        assert!(up.new_entry);
        assert!(!up.completed);

        // Three distinct endorsers reach n - f = 3.
        let mut completed = false;
        for sender in [0, 2, 3] {
            let up = st
                .on_proven(&kit, &cfg, &opts, &committee, sender, 0, b"aa", &proof, true)
                .unwrap();
            assert!(up.endorse.is_none(), "endorse at most once");
            completed |= up.completed;
        }
        assert!(completed);
        assert!(st.complete());
        assert_eq!(st.sender_count(), 3);

        // Late endorsements change nothing.
        let up = st
            .on_proven(&kit, &cfg, &opts, &committee, 1, 0, b"aa", &proof, true)
            .unwrap();
        assert!(!up.completed);
    }

    #[test]
    fn per_candidate_mode_endorses_each_proposer_once() {
        let (cfg, kit, keys) = setup(4, 1);
        let opts = ProtocolOptions { recommend_per_candidate: true };
        let committee = vec![0, 1];
        let p0 = proven(&kit, &keys, &cfg, 0, b"aa");
        let p1 = proven(&kit, &keys, &cfg, 1, b"bb");
        let mut st = RecommendState::new(1);

        assert!(st
            .on_proven(&kit, &cfg, &opts, &committee, 0, 0, b"aa", &p0, false)
            .unwrap()
            .endorse
            .is_some());
        assert!(st
            .on_proven(&kit, &cfg, &opts, &committee, 1, 1, b"bb", &p1, false)
            .unwrap()
            .endorse
            .is_some());
        assert!(st
            .on_proven(&kit, &cfg, &opts, &committee, 2, 1, b"bb", &p1, true)
            .unwrap()
            .endorse
            .is_none());
    }

    #[test]
    fn rejects_outsiders_and_bad_proofs() {
        let (cfg, kit, keys) = setup(4, 1);
        let opts = ProtocolOptions::default();
        let committee = vec![0, 1];
        let mut st = RecommendState::new(1);

        let p2 = proven(&kit, &keys, &cfg, 2, b"cc");
        assert_eq!(
            st.on_proven(&kit, &cfg, &opts, &committee, 2, 2, b"cc", &p2, false),
            Err(RecError::NotCommittee)
        );

        let p0 = proven(&kit, &keys, &cfg, 0, b"aa");
        assert_eq!(
            st.on_proven(&kit, &cfg, &opts, &committee, 0, 0, b"other", &p0, false),
            Err(RecError::BadProof)
        );
        assert_eq!(st.sender_count(), 0);
        assert!(st.entry(0).is_none());
    }

    #[test]
    fn entries_are_write_once() {
        let (cfg, kit, keys) = setup(4, 1);
        let opts = ProtocolOptions::default();
        let committee = vec![0, 1];
        let proof = proven(&kit, &keys, &cfg, 0, b"aa");
        let mut st = RecommendState::new(1);
        st.on_proven(&kit, &cfg, &opts, &committee, 0, 0, b"aa", &proof, false).unwrap();
        let up = st
            .on_proven(&kit, &cfg, &opts, &committee, 3, 0, b"aa", &proof, true)
            .unwrap();
        assert!(!up.new_entry);
        assert_eq!(st.entry(0).unwrap().0, b"aa");
    }
}
