//! Mock threshold cryptography with real distinctness and threshold
//! semantics.
//!
//! Shares and signatures are keyed hashes rather than group elements: each
//! party's secret key is derived from the run's master seed, a share is a
//! keyed hash of the tag under that secret, and the combined artifact
//! (coin seed or proof) is a keyed hash under the master key that the
//! combiner recomputes only after counting a threshold of valid shares
//! from distinct issuers.
//!
//! That construction keeps the properties the protocol actually relies on:
//!
//! * shares from different parties or different tags are distinct;
//! * combining is subset-independent: any threshold-sized set of valid
//!   shares yields byte-identical output;
//! * forging is impossible by construction inside the simulator, because
//!   minting a share requires the issuer's [`PartyKey`] and adversary code
//!   is only ever handed the Byzantine parties' keys.
//!
//! Tags are ASCII strings with the grammar
//! `PREFIX|instance[|party[|round]]`, e.g. `CS|3`, `VCBC|3|2`, `PERM|3`,
//! `ABBA|3|0`, `COIN|3|0|5`. They are embedded verbatim in shares, proofs
//! and traces so that runs stay grep-able.

use crate::config::SysConfig;
use crate::{Instance, PartyId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const ROLE_COIN: &[u8] = b"coin-key";
const ROLE_SIG: &[u8] = b"sig-key";
const ROLE_DIGEST: &[u8] = b"digest-key";
const DOM_COIN_SHARE: &[u8] = b"coin-share";
const DOM_COIN_OUT: &[u8] = b"coin-out";
const DOM_SIG_SHARE: &[u8] = b"sig-share";
const DOM_SIG_OUT: &[u8] = b"sig-out";
const DOM_PROPOSAL: &[u8] = b"proposal-digest";
const DOM_STATEMENT: &[u8] = b"statement-digest";

/// Keyed hash with fixed-width output. Every input is length-prefixed so
/// that concatenation ambiguity cannot alias two different part lists.
pub fn keyed_hash(out_len: usize, key: &[u8], parts: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len);
    let mut block: u32 = 0;
    while out.len() < out_len {
        let mut h = Sha256::new();
        h.update(block.to_be_bytes());
        h.update((key.len() as u32).to_be_bytes());
        h.update(key);
        for p in parts {
            h.update((p.len() as u32).to_be_bytes());
            h.update(p);
        }
        out.extend_from_slice(&h.finalize());
        block += 1;
    }
    out.truncate(out_len);
    out
}

// ---- tags ----

pub fn cs_tag(instance: Instance) -> String {
    format!("CS|{instance}")
}

pub fn vcbc_tag(instance: Instance, proposer: PartyId) -> String {
    format!("VCBC|{instance}|{proposer}")
}

pub fn perm_tag(instance: Instance) -> String {
    format!("PERM|{instance}")
}

pub fn abba_tag(instance: Instance, candidate: PartyId) -> String {
    format!("ABBA|{instance}|{candidate}")
}

pub fn coin_tag(instance: Instance, candidate: PartyId, round: u64) -> String {
    format!("COIN|{instance}|{candidate}|{round}")
}

// ---- artifacts ----

/// One party's contribution to a common coin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinShare {
    pub tag: String,
    pub issuer: PartyId,
    pub bytes: Vec<u8>,
}

/// One party's signature share over `(tag, digest)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigShare {
    pub tag: String,
    pub digest: Vec<u8>,
    pub issuer: PartyId,
    pub bytes: Vec<u8>,
}

/// Combined threshold signature: transferable evidence that a threshold of
/// distinct parties signed `digest` under `tag`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proof {
    pub tag: String,
    pub digest: Vec<u8>,
    pub sig: Vec<u8>,
}

/// Output of a combined coin: unpredictable until a threshold of shares
/// exists, identical for every combiner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSeed {
    pub tag: String,
    pub bytes: Vec<u8>,
}

impl RandomSeed {
    /// Collapse the seed to one bit (used by the round coins).
    pub fn bit(&self) -> bool {
        self.bytes.first().map(|b| b & 1 == 1).unwrap_or(false)
    }
}

/// Secret signing material of one party. Holding a `PartyKey` is the only
/// way to mint shares, which is what scopes the adversary to its own
/// parties.
#[derive(Debug, Clone)]
pub struct PartyKey {
    pub index: PartyId,
    lambda: usize,
    coin_key: Vec<u8>,
    sig_key: Vec<u8>,
}

impl PartyKey {
    pub fn coin_share(&self, tag: &str) -> CoinShare {
        CoinShare {
            tag: tag.to_string(),
            issuer: self.index,
            bytes: keyed_hash(self.lambda, &self.coin_key, &[DOM_COIN_SHARE, tag.as_bytes()]),
        }
    }

    pub fn sig_share(&self, tag: &str, digest: &[u8]) -> SigShare {
        SigShare {
            tag: tag.to_string(),
            digest: digest.to_vec(),
            issuer: self.index,
            bytes: keyed_hash(self.lambda, &self.sig_key, &[DOM_SIG_SHARE, tag.as_bytes(), digest]),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("need {needed} valid shares from distinct issuers, have {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("shares disagree on (tag, digest)")]
    MixedStatements,
}

/// Public side of the toolkit: verification, combination and digests.
///
/// The kit internally derives every party's key from the master seed (that
/// is how verification recomputes shares), but exposes no API that returns
/// key material or mints a share, so holding a kit does not confer signing
/// power for anyone.
#[derive(Debug, Clone)]
pub struct CryptoKit {
    lambda: usize,
    coin_keys: Vec<Vec<u8>>,
    sig_keys: Vec<Vec<u8>>,
    master_coin: Vec<u8>,
    master_sig: Vec<u8>,
    digest_key: Vec<u8>,
}

impl CryptoKit {
    pub fn new(cfg: &SysConfig) -> Self {
        let derive = |role: &[u8], idx: Option<usize>| -> Vec<u8> {
            match idx {
                Some(i) => {
                    keyed_hash(32, &cfg.master_seed, &[role, &(i as u64).to_be_bytes()])
                }
                None => keyed_hash(32, &cfg.master_seed, &[role, b"master"]),
            }
        };
        CryptoKit {
            lambda: cfg.lambda,
            coin_keys: (0..cfg.n).map(|i| derive(ROLE_COIN, Some(i))).collect(),
            sig_keys: (0..cfg.n).map(|i| derive(ROLE_SIG, Some(i))).collect(),
            master_coin: derive(ROLE_COIN, None),
            master_sig: derive(ROLE_SIG, None),
            digest_key: derive(ROLE_DIGEST, None),
        }
    }

    /// Derive every party's secret key. Called once by the run setup; the
    /// simulator hands each engine only its own entry (and the adversary
    /// only the Byzantine entries).
    pub fn keygen(cfg: &SysConfig) -> Vec<PartyKey> {
        let kit = CryptoKit::new(cfg);
        (0..cfg.n)
            .map(|i| PartyKey {
                index: i,
                lambda: cfg.lambda,
                coin_key: kit.coin_keys[i].clone(),
                sig_key: kit.sig_keys[i].clone(),
            })
            .collect()
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    fn n(&self) -> usize {
        self.coin_keys.len()
    }

    pub fn coin_share_verify(&self, tag: &str, share: &CoinShare) -> bool {
        share.tag == tag
            && share.issuer < self.n()
            && share.bytes
                == keyed_hash(
                    self.lambda,
                    &self.coin_keys[share.issuer],
                    &[DOM_COIN_SHARE, tag.as_bytes()],
                )
    }

    pub fn sig_share_verify(&self, tag: &str, digest: &[u8], share: &SigShare) -> bool {
        share.tag == tag
            && share.digest == digest
            && share.issuer < self.n()
            && share.bytes
                == keyed_hash(
                    self.lambda,
                    &self.sig_keys[share.issuer],
                    &[DOM_SIG_SHARE, tag.as_bytes(), digest],
                )
    }

    /// Combine a coin once `threshold` valid shares from distinct issuers
    /// are present. Output depends only on the tag, never on which subset
    /// of shares was used.
    pub fn coin_toss(
        &self,
        tag: &str,
        shares: &[CoinShare],
        threshold: usize,
    ) -> Result<RandomSeed, CryptoError> {
        let mut issuers: Vec<PartyId> = shares
            .iter()
            .filter(|s| self.coin_share_verify(tag, s))
            .map(|s| s.issuer)
            .collect();
        issuers.sort_unstable();
        issuers.dedup();
        if issuers.len() < threshold {
            return Err(CryptoError::InsufficientShares { needed: threshold, got: issuers.len() });
        }
        Ok(RandomSeed { tag: tag.to_string(), bytes: self.coin_output(tag) })
    }

    fn coin_output(&self, tag: &str) -> Vec<u8> {
        keyed_hash(self.lambda, &self.master_coin, &[DOM_COIN_OUT, tag.as_bytes()])
    }

    /// Check a claimed coin seed. Only useful once the coin is public
    /// anyway; guessing an unrevealed seed still requires `2^(8*lambda)`
    /// luck.
    pub fn coin_verify(&self, tag: &str, seed: &RandomSeed) -> bool {
        seed.tag == tag && seed.bytes == self.coin_output(tag)
    }

    /// Combine a threshold signature over `(tag, digest)`.
    pub fn sig_combine(
        &self,
        tag: &str,
        digest: &[u8],
        shares: &[SigShare],
        threshold: usize,
    ) -> Result<Proof, CryptoError> {
        if shares.iter().any(|s| s.tag != tag || s.digest != digest) {
            return Err(CryptoError::MixedStatements);
        }
        let mut issuers: Vec<PartyId> = shares
            .iter()
            .filter(|s| self.sig_share_verify(tag, digest, s))
            .map(|s| s.issuer)
            .collect();
        issuers.sort_unstable();
        issuers.dedup();
        if issuers.len() < threshold {
            return Err(CryptoError::InsufficientShares { needed: threshold, got: issuers.len() });
        }
        Ok(Proof {
            tag: tag.to_string(),
            digest: digest.to_vec(),
            sig: keyed_hash(self.lambda, &self.master_sig, &[DOM_SIG_OUT, tag.as_bytes(), digest]),
        })
    }

    pub fn proof_verify(&self, tag: &str, digest: &[u8], proof: &Proof) -> bool {
        proof.tag == tag
            && proof.digest == digest
            && proof.sig
                == keyed_hash(self.lambda, &self.master_sig, &[DOM_SIG_OUT, tag.as_bytes(), digest])
    }

    /// Check a proof against its own embedded statement. Used when the
    /// statement travels with the proof, e.g. inside a vote justification;
    /// callers still compare `proof.tag` against the expected tag.
    pub fn proof_self_verify(&self, proof: &Proof) -> bool {
        self.proof_verify(&proof.tag, &proof.digest, proof)
    }

    /// Digest binding a proposal payload to its broadcast tag.
    pub fn proposal_digest(&self, tag: &str, payload: &[u8]) -> Vec<u8> {
        keyed_hash(self.lambda, &self.digest_key, &[DOM_PROPOSAL, tag.as_bytes(), payload])
    }

    /// Digest of an interior protocol statement (e.g. "round 3 voted 1"),
    /// used as the signing target for vote and commit shares.
    pub fn statement_digest(&self, tag: &str, parts: &[&[u8]]) -> Vec<u8> {
        let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 2);
        all.push(DOM_STATEMENT);
        all.push(tag.as_bytes());
        all.extend_from_slice(parts);
        keyed_hash(self.lambda, &self.digest_key, &all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SysConfig {
        SysConfig::new(4, 1, 32, 32, [42u8; 32]).unwrap()
    }

    /// Independent recomputation of the share construction, spelled out
    /// with raw sha2 calls. Freezes the byte layout: if the kit's hashing
    /// changes shape, this fails.
    #[test]
    fn share_bytes_match_reference_construction() {
        let c = cfg();
        let keys = CryptoKit::keygen(&c);
        let share = keys[2].coin_share("CS|1");

        let mut h = Sha256::new();
        // party 2 coin key = keyed_hash(32, master_seed, ["coin-key", be64(2)])
        h.update(0u32.to_be_bytes());
        h.update((c.master_seed.len() as u32).to_be_bytes());
        h.update(c.master_seed);
        h.update((b"coin-key".len() as u32).to_be_bytes());
        h.update(b"coin-key");
        h.update(8u32.to_be_bytes());
        h.update(2u64.to_be_bytes());
        let coin_key = h.finalize();

        let mut h = Sha256::new();
        h.update(0u32.to_be_bytes());
        h.update(32u32.to_be_bytes());
        h.update(coin_key);
        h.update((b"coin-share".len() as u32).to_be_bytes());
        h.update(b"coin-share");
        h.update(4u32.to_be_bytes());
        h.update(b"CS|1");
        assert_eq!(share.bytes, h.finalize().to_vec());
    }

    #[test]
    fn shares_distinct_across_parties_and_tags() {
        let keys = CryptoKit::keygen(&cfg());
        let a = keys[0].coin_share("CS|1");
        let b = keys[1].coin_share("CS|1");
        let c = keys[0].coin_share("CS|2");
        assert_ne!(a.bytes, b.bytes);
        assert_ne!(a.bytes, c.bytes);
    }

    #[test]
    fn coin_toss_needs_threshold_distinct_issuers() {
        let c = cfg();
        let kit = CryptoKit::new(&c);
        let keys = CryptoKit::keygen(&c);
        let tag = cs_tag(1);
        let shares: Vec<_> = keys.iter().map(|k| k.coin_share(&tag)).collect();

        assert_eq!(
            kit.coin_toss(&tag, &shares[..1], 2),
            Err(CryptoError::InsufficientShares { needed: 2, got: 1 })
        );
        // duplicates of one issuer do not add up
        let dup = vec![shares[0].clone(), shares[0].clone(), shares[0].clone()];
        assert!(kit.coin_toss(&tag, &dup, 2).is_err());
        assert!(kit.coin_toss(&tag, &shares[..2], 2).is_ok());
    }

    #[test]
    fn coin_toss_subset_independent() {
        let c = cfg();
        let kit = CryptoKit::new(&c);
        let keys = CryptoKit::keygen(&c);
        let tag = cs_tag(9);
        let shares: Vec<_> = keys.iter().map(|k| k.coin_share(&tag)).collect();
        let a = kit.coin_toss(&tag, &shares[0..2], 2).unwrap();
        let b = kit.coin_toss(&tag, &shares[2..4], 2).unwrap();
        let all = kit.coin_toss(&tag, &shares, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, all);
    }

    #[test]
    fn tampered_share_rejected() {
        let c = cfg();
        let kit = CryptoKit::new(&c);
        let keys = CryptoKit::keygen(&c);
        let tag = cs_tag(1);
        let mut s = keys[0].coin_share(&tag);
        assert!(kit.coin_share_verify(&tag, &s));
        s.bytes[0] ^= 1;
        assert!(!kit.coin_share_verify(&tag, &s));
        // claiming someone else's index does not help either
        let mut stolen = keys[0].coin_share(&tag);
        stolen.issuer = 1;
        assert!(!kit.coin_share_verify(&tag, &stolen));
    }

    #[test]
    fn sig_combine_rejects_mixed_digests() {
        let c = cfg();
        let kit = CryptoKit::new(&c);
        let keys = CryptoKit::keygen(&c);
        let tag = vcbc_tag(1, 0);
        let d1 = kit.proposal_digest(&tag, b"payload-a");
        let d2 = kit.proposal_digest(&tag, b"payload-b");
        let mixed = vec![keys[0].sig_share(&tag, &d1), keys[1].sig_share(&tag, &d2)];
        assert_eq!(kit.sig_combine(&tag, &d1, &mixed, 2), Err(CryptoError::MixedStatements));
    }

    #[test]
    fn proof_verifies_only_for_its_statement() {
        let c = cfg();
        let kit = CryptoKit::new(&c);
        let keys = CryptoKit::keygen(&c);
        let tag = vcbc_tag(3, 2);
        let digest = kit.proposal_digest(&tag, b"hello");
        let shares: Vec<_> = keys.iter().map(|k| k.sig_share(&tag, &digest)).collect();
        let proof = kit.sig_combine(&tag, &digest, &shares, 3).unwrap();
        assert!(kit.proof_verify(&tag, &digest, &proof));
        assert!(kit.proof_self_verify(&proof));
        let other = kit.proposal_digest(&tag, b"other");
        assert!(!kit.proof_verify(&tag, &other, &proof));
        assert!(!kit.proof_verify(&vcbc_tag(3, 1), &digest, &proof));
    }

    #[test]
    fn coin_bit_is_stable() {
        let c = cfg();
        let kit = CryptoKit::new(&c);
        let keys = CryptoKit::keygen(&c);
        let tag = coin_tag(1, 0, 3);
        let shares: Vec<_> = keys.iter().map(|k| k.coin_share(&tag)).collect();
        let s1 = kit.coin_toss(&tag, &shares, 3).unwrap();
        let s2 = kit.coin_toss(&tag, &shares[1..], 3).unwrap();
        assert_eq!(s1.bit(), s2.bit());
        assert!(kit.coin_verify(&tag, &s1));
    }

    #[test]
    fn tag_grammar() {
        assert_eq!(cs_tag(7), "CS|7");
        assert_eq!(vcbc_tag(7, 3), "VCBC|7|3");
        assert_eq!(perm_tag(7), "PERM|7");
        assert_eq!(abba_tag(7, 2), "ABBA|7|2");
        assert_eq!(coin_tag(7, 2, 4), "COIN|7|2|4");
    }
}
