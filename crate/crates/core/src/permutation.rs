//! Candidate ordering: a second threshold coin shuffles the committee.
//!
//! Shares for this coin are released only after a party's recommendation
//! phase settles, and the threshold is `2f + 1`: the adversary's `f` keys
//! plus any early honest leakage still leave it short until at least
//! `f + 1` honest parties have finished spreading proposals. By then the
//! set of well-spread proposals is fixed, so the order cannot be chosen
//! against it.

use crate::committee::seeded_permutation;
use crate::config::SysConfig;
use crate::crypto::{perm_tag, CoinShare, CryptoKit, PartyKey, RandomSeed};
use crate::messages::{Message, Outbound};
use crate::{Instance, PartyId};
use std::collections::BTreeMap;
use thiserror::Error;

/// Apply the seed-derived shuffle to the committee member list.
pub fn order_candidates(seed: &RandomSeed, committee: &[PartyId]) -> Vec<PartyId> {
    seeded_permutation(committee.len(), seed)
        .into_iter()
        .map(|slot| committee[slot])
        .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PermError {
    #[error("share release already done")]
    AlreadyStarted,
    #[error("share for wrong instance or tag")]
    WrongTag,
    #[error("share issuer does not match envelope sender")]
    IssuerMismatch,
    #[error("share failed verification")]
    InvalidShare,
    #[error("duplicate share")]
    Duplicate,
}

/// Per-party ordering state for one instance.
///
/// Collection and completion are decoupled: shares are accepted whenever
/// they arrive (other parties may settle earlier than us), but the engine
/// only asks for the ordering once its own recommendation phase is done.
#[derive(Debug)]
pub struct PermState {
    instance: Instance,
    tag: String,
    started: bool,
    shares: BTreeMap<PartyId, CoinShare>,
    order: Option<Vec<PartyId>>,
}

impl PermState {
    pub fn new(instance: Instance) -> Self {
        PermState {
            instance,
            tag: perm_tag(instance),
            started: false,
            shares: BTreeMap::new(),
            order: None,
        }
    }

    pub fn order(&self) -> Option<&Vec<PartyId>> {
        self.order.as_ref()
    }

    /// Release our share (once, after recommendations settle).
    pub fn start(&mut self, key: &PartyKey) -> Result<Outbound, PermError> {
        if self.started {
            return Err(PermError::AlreadyStarted);
        }
        self.started = true;
        let share = key.coin_share(&self.tag);
        Ok(Outbound::all(Message::PermShare { instance: self.instance, share }))
    }

    /// Record a share. Completion is not checked here; call
    /// [`try_complete`](Self::try_complete) when the ordering may be used.
    pub fn on_share(&mut self, kit: &CryptoKit, from: PartyId, share: CoinShare) -> Result<(), PermError> {
        if share.tag != self.tag {
            return Err(PermError::WrongTag);
        }
        if share.issuer != from {
            return Err(PermError::IssuerMismatch);
        }
        if !kit.coin_share_verify(&self.tag, &share) {
            return Err(PermError::InvalidShare);
        }
        if self.order.is_some() {
            return Ok(());
        }
        if self.shares.insert(from, share).is_some() {
            return Err(PermError::Duplicate);
        }
        Ok(())
    }

    /// Combine the coin and fix the candidate order once `2f + 1` shares
    /// are in. Idempotent; returns the order every time once known.
    pub fn try_complete(
        &mut self,
        kit: &CryptoKit,
        cfg: &SysConfig,
        committee: &[PartyId],
    ) -> Option<&Vec<PartyId>> {
        if self.order.is_none() && self.shares.len() >= cfg.high_threshold() {
            let shares: Vec<CoinShare> = self.shares.values().cloned().collect();
            let seed = kit
                .coin_toss(&self.tag, &shares, cfg.high_threshold())
                .expect("threshold met with verified shares");
            self.order = Some(order_candidates(&seed, committee));
        }
        self.order.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SysConfig {
        SysConfig::new(4, 1, 8, 32, [13u8; 32]).unwrap()
    }

    #[test]
    fn ordering_appears_at_threshold_and_is_stable() {
        let c = cfg();
        let kit = CryptoKit::new(&c);
        let keys = CryptoKit::keygen(&c);
        let committee = vec![2, 0];
        let mut st = PermState::new(1);
        st.start(&keys[0]).unwrap();
        for k in &keys[..2] {
            st.on_share(&kit, k.index, k.coin_share(&perm_tag(1))).unwrap();
            assert!(st.try_complete(&kit, &c, &committee).is_none());
        }
        st.on_share(&kit, 2, keys[2].coin_share(&perm_tag(1))).unwrap();
        let order = st.try_complete(&kit, &c, &committee).unwrap().clone();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 2], "ordering permutes exactly the committee");

        // A different share subset gives the same ordering.
        let mut st2 = PermState::new(1);
        for k in &keys[1..4] {
            st2.on_share(&kit, k.index, k.coin_share(&perm_tag(1))).unwrap();
        }
        assert_eq!(st2.try_complete(&kit, &c, &committee).unwrap(), &order);
    }

    #[test]
    fn share_validation_mirrors_selection() {
        let c = cfg();
        let kit = CryptoKit::new(&c);
        let keys = CryptoKit::keygen(&c);
        let mut st = PermState::new(1);
        let share = keys[0].coin_share(&perm_tag(1));
        st.on_share(&kit, 0, share.clone()).unwrap();
        assert_eq!(st.on_share(&kit, 0, share.clone()), Err(PermError::Duplicate));
        assert_eq!(st.on_share(&kit, 1, share), Err(PermError::IssuerMismatch));
        assert_eq!(
            st.on_share(&kit, 1, keys[1].coin_share(&crate::crypto::cs_tag(1))),
            Err(PermError::WrongTag)
        );
    }

    /// Frequency oracle: each committee member lands in the first slot
    /// with probability 1/(f+1).
    #[test]
    fn first_slot_is_uniform() {
        let committee = vec![4, 1, 6];
        let trials = 10_000;
        let mut rng = ChaCha8Rng::from_seed([21u8; 32]);
        let mut firsts: BTreeMap<PartyId, u32> = BTreeMap::new();
        for _ in 0..trials {
            let mut bytes = vec![0u8; 32];
            rng.fill_bytes(&mut bytes);
            let seed = RandomSeed { tag: perm_tag(1), bytes };
            *firsts.entry(order_candidates(&seed, &committee)[0]).or_default() += 1;
        }
        for &m in &committee {
            let freq = *firsts.get(&m).unwrap_or(&0) as f64 / trials as f64;
            assert!(
                (freq - 1.0 / 3.0).abs() < 0.05,
                "member {m} first with frequency {freq:.3}"
            );
        }
    }
}
