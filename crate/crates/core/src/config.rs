//! System-wide parameters shared by every party of a run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Static configuration of one protocol run.
///
/// `n` parties, at most `f` of them Byzantine, proposals of `payload_len`
/// bytes, and digests/shares/signatures of `lambda` bytes. The trusted
/// setup is modelled by `master_seed`: every per-party key and every
/// combined threshold artifact is derived from it by keyed hashing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SysConfig {
    pub n: usize,
    pub f: usize,
    /// Proposal payload length in bytes (`l`).
    pub payload_len: usize,
    /// Security parameter in bytes; width of digests, shares and proofs.
    pub lambda: usize,
    /// Root of the mock trusted setup.
    pub master_seed: [u8; 32],
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("need n >= 3f+1, got n={n} f={f}")]
    BadResilience { n: usize, f: usize },
    #[error("lambda must be >= 16, got {0}")]
    LambdaTooSmall(usize),
    #[error("payload_len must be >= 1, got {0}")]
    EmptyPayload(usize),
}

impl SysConfig {
    pub fn new(
        n: usize,
        f: usize,
        payload_len: usize,
        lambda: usize,
        master_seed: [u8; 32],
    ) -> Result<Self, ConfigError> {
        if n < 3 * f + 1 || n == 0 {
            return Err(ConfigError::BadResilience { n, f });
        }
        if lambda < 16 {
            return Err(ConfigError::LambdaTooSmall(lambda));
        }
        if payload_len == 0 {
            return Err(ConfigError::EmptyPayload(payload_len));
        }
        Ok(SysConfig { n, f, payload_len, lambda, master_seed })
    }

    /// Largest tolerated fault count for `n` parties.
    pub fn max_faults(n: usize) -> usize {
        (n.saturating_sub(1)) / 3
    }

    /// Committee size: `f + 1`.
    pub fn committee_size(&self) -> usize {
        self.f + 1
    }

    /// Quorum of `n - f` distinct parties.
    pub fn quorum(&self) -> usize {
        self.n - self.f
    }

    /// Threshold for proofs and the permutation coin: `2f + 1`.
    pub fn high_threshold(&self) -> usize {
        2 * self.f + 1
    }

    /// Threshold for the committee-selection coin: `f + 1`.
    pub fn low_threshold(&self) -> usize {
        self.f + 1
    }
}

/// Behavioral switches that are not part of the core parameter set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    /// When `false` (the default), a party recommends only the first proven
    /// proposal it sees per instance. When `true` it re-multicasts a
    /// recommendation for every distinct proven proposal, trading messages
    /// for a denser recommendation map.
    pub recommend_per_candidate: bool,
}
