//! Counters and per-instance audit records collected by the simulator.

use crate::{Instance, PartyId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Integer-keyed maps as string-keyed JSON objects, symmetrically. The
/// serializer writes string keys anyway; spelling the conversion out
/// keeps deserialization working inside tagged enums, whose content
/// buffering would otherwise present the keys as plain strings.
mod str_keys {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;
    use std::fmt::Display;
    use std::str::FromStr;

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, ser: S) -> Result<S::Ok, S::Error>
    where
        K: Display,
        V: Serialize,
        S: Serializer,
    {
        ser.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, K, V, D>(de: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: FromStr + Ord,
        K::Err: Display,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let raw = BTreeMap::<String, V>::deserialize(de)?;
        raw.into_iter()
            .map(|(k, v)| k.parse::<K>().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct InstanceMetrics {
    /// Point-to-point envelopes attributed to this instance (a broadcast
    /// to n parties counts n).
    pub envelopes: u64,
    /// Bytes carried that are request payload.
    pub payload_bytes: u64,
    /// Everything else: shares, proofs, framing.
    pub overhead_bytes: u64,
    /// Longest chain of deliveries each depending on the previous one; a
    /// scheduler-independent stand-in for protocol latency.
    pub causal_depth: u64,
    pub kinds: BTreeMap<String, u64>,
    pub equivocations: u64,
    pub fetches: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Metrics {
    pub deliveries: u64,
    pub drops: BTreeMap<String, u64>,
    #[serde(with = "str_keys")]
    pub per_instance: BTreeMap<Instance, InstanceMetrics>,
}

impl Metrics {
    pub fn instance(&mut self, instance: Instance) -> &mut InstanceMetrics {
        self.per_instance.entry(instance).or_default()
    }

    pub fn total_envelopes(&self) -> u64 {
        self.per_instance.values().map(|m| m.envelopes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.per_instance.values().map(|m| m.payload_bytes + m.overhead_bytes).sum()
    }
}

/// Facts about one finished instance, assembled from engine notes and
/// delivery observation. This is what the statistical claims are checked
/// against.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InstanceAudit {
    pub instance: Instance,
    pub committee: Vec<PartyId>,
    pub order: Vec<PartyId>,
    /// Candidates whose proven payload at least `f + 1` honest parties
    /// held when they fixed the order.
    pub good_set: Vec<PartyId>,
    /// 1-based position in `order` of the first good-set member.
    pub first_hit: Option<u64>,
    /// Agreed 1-based position of the winning candidate.
    pub iterations: u64,
    pub decided_candidate: PartyId,
    /// Highest binary agreement round any honest party reported, per
    /// candidate actually decided.
    #[serde(with = "str_keys")]
    pub rounds: BTreeMap<PartyId, u64>,
    /// (candidate, number of parties holding its proven payload) at the
    /// moment the last honest party finished spreading.
    pub holders_at_spread_done: Vec<(PartyId, usize)>,
    pub max_holders_at_spread_done: usize,
    /// Honest ordering shares already sent when the ordering coin first
    /// had enough material to combine (counting every adversary key as
    /// available from the start).
    pub honest_order_shares_before_combinable: usize,
    /// Honest parties that started the candidate scan with a 0 estimate,
    /// summed over candidates.
    pub honest_zero_inputs: u64,
    pub zero_decided: Vec<PartyId>,
}
