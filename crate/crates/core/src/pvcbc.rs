//! Verifiable consistent broadcast for committee proposals.
//!
//! The proposer multicasts its payload, every receiver signs the payload
//! digest at most once per (proposer, instance), and `2f + 1` echo shares
//! combine into a transferable proof. Consistency hinges on the sign-once
//! rule: two proofs for different digests under the same tag would need
//! `2f + 1` signers each, hence an honest party in both signer sets, which
//! the rule forbids.

use crate::config::SysConfig;
use crate::crypto::{vcbc_tag, CryptoKit, PartyKey, Proof, SigShare};
use crate::messages::{Message, Outbound, Recipient};
use crate::{Instance, PartyId};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VcbcError {
    #[error("broadcast already started")]
    AlreadyStarted,
    #[error("echo for a digest this sender never proposed")]
    DigestMismatch,
    #[error("echo issuer does not match envelope sender")]
    IssuerMismatch,
    #[error("echo share failed verification")]
    InvalidShare,
    #[error("duplicate echo")]
    Duplicate,
    #[error("conflicting payload from the same proposer")]
    Equivocation,
}

/// Proposer side: collect echo shares on our own payload until the proof
/// combines.
#[derive(Debug)]
pub struct VcbcSender {
    instance: Instance,
    tag: String,
    payload: Vec<u8>,
    digest: Vec<u8>,
    started: bool,
    echoes: BTreeMap<PartyId, SigShare>,
    proof: Option<Proof>,
}

impl VcbcSender {
    pub fn new(kit: &CryptoKit, instance: Instance, proposer: PartyId, payload: Vec<u8>) -> Self {
        let tag = vcbc_tag(instance, proposer);
        let digest = kit.proposal_digest(&tag, &payload);
        VcbcSender {
            instance,
            tag,
            payload,
            digest,
            started: false,
            echoes: BTreeMap::new(),
            proof: None,
        }
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn proof(&self) -> Option<&Proof> {
        self.proof.as_ref()
    }

    pub fn start(&mut self, proposer: PartyId) -> Result<Outbound, VcbcError> {
        if self.started {
            return Err(VcbcError::AlreadyStarted);
        }
        self.started = true;
        Ok(Outbound::all(Message::VcbcSend {
            instance: self.instance,
            proposer,
            payload: self.payload.clone(),
        }))
    }

    /// Record one echo share; at `2f + 1` distinct issuers the proof
    /// combines and is returned once.
    pub fn on_echo(
        &mut self,
        kit: &CryptoKit,
        cfg: &SysConfig,
        from: PartyId,
        share: SigShare,
    ) -> Result<Option<&Proof>, VcbcError> {
        if share.issuer != from {
            return Err(VcbcError::IssuerMismatch);
        }
        if share.tag != self.tag || share.digest != self.digest {
            return Err(VcbcError::DigestMismatch);
        }
        if !kit.sig_share_verify(&self.tag, &self.digest, &share) {
            return Err(VcbcError::InvalidShare);
        }
        if self.proof.is_some() {
            return Ok(None);
        }
        if self.echoes.insert(from, share).is_some() {
            return Err(VcbcError::Duplicate);
        }
        if self.echoes.len() >= cfg.high_threshold() {
            let shares: Vec<SigShare> = self.echoes.values().cloned().collect();
            let proof = kit
                .sig_combine(&self.tag, &self.digest, &shares, cfg.high_threshold())
                .expect("threshold met with verified shares");
            self.proof = Some(proof);
            return Ok(self.proof.as_ref());
        }
        Ok(None)
    }
}

/// Receiver side, shared across all proposers of one instance: remembers
/// which digest it signed for each proposer and refuses to sign a second.
#[derive(Debug)]
pub struct VcbcReceiver {
    instance: Instance,
    signed: BTreeMap<PartyId, Vec<u8>>,
}

impl VcbcReceiver {
    pub fn new(instance: Instance) -> Self {
        VcbcReceiver { instance, signed: BTreeMap::new() }
    }

    /// Handle a proposer's payload multicast. First sight of a proposer
    /// yields an echo unicast back to it; a repeat of the same payload is
    /// absorbed; a different payload is flagged as equivocation.
    pub fn on_send(
        &mut self,
        kit: &CryptoKit,
        key: &PartyKey,
        proposer: PartyId,
        payload: &[u8],
    ) -> Result<Option<Outbound>, VcbcError> {
        let tag = vcbc_tag(self.instance, proposer);
        let digest = kit.proposal_digest(&tag, payload);
        match self.signed.get(&proposer) {
            Some(prev) if *prev == digest => Ok(None),
            Some(_) => Err(VcbcError::Equivocation),
            None => {
                let share = key.sig_share(&tag, &digest);
                self.signed.insert(proposer, digest);
                Ok(Some(Outbound {
                    to: Recipient::One(proposer),
                    msg: Message::VcbcEcho { instance: self.instance, proposer, share },
                }))
            }
        }
    }
}
