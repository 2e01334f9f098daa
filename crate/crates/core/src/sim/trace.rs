//! JSONL run traces.
//!
//! A trace is a sequence of self-describing JSON lines: one header, one
//! line per delivery, marker lines for the spread snapshot and the good
//! set, one decision line per instance, and a final metrics line. The
//! trace hash is the SHA-256 of the exact bytes, so an identical re-run
//! reproduces it bit for bit and replay checking is a hash comparison.

use crate::sim::metrics::{InstanceAudit, Metrics};
use crate::{Instance, PartyId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header {
        n: usize,
        f: usize,
        payload_len: usize,
        lambda: usize,
        master_seed: String,
        strategy: String,
        seed: u64,
        instances: u64,
    },
    Deliver {
        t: u64,
        sent: u64,
        from: PartyId,
        to: PartyId,
        kind: String,
        bytes: u64,
        instance: Instance,
        #[serde(skip_serializing_if = "Option::is_none")]
        candidate: Option<PartyId>,
        #[serde(skip_serializing_if = "Option::is_none")]
        round: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        value: Option<bool>,
    },
    /// Emitted when the last honest party finishes spreading: who holds
    /// which proven proposal at that point.
    Spread {
        t: u64,
        instance: Instance,
        holders: Vec<(PartyId, usize)>,
        max_holders: usize,
    },
    /// Emitted when the last honest party fixes the candidate order.
    GoodSet {
        t: u64,
        instance: Instance,
        order: Vec<PartyId>,
        members: Vec<PartyId>,
        first_hit: Option<u64>,
    },
    Decision {
        t: u64,
        instance: Instance,
        candidate: PartyId,
        iterations: u64,
        payload_digest: String,
        payload_len: usize,
    },
    Metrics {
        t: u64,
        metrics: Metrics,
        audits: Vec<InstanceAudit>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// Hash every line, retain nothing.
    Hash,
    /// Hash and keep the lines for writing out.
    Full,
}

pub struct TraceCollector {
    mode: TraceMode,
    hasher: Sha256,
    lines: Vec<String>,
    count: u64,
}

impl TraceCollector {
    pub fn new(mode: TraceMode) -> Self {
        TraceCollector { mode, hasher: Sha256::new(), lines: Vec::new(), count: 0 }
    }

    pub fn push(&mut self, line: &TraceLine) {
        let text = serde_json::to_string(line).expect("trace lines serialize");
        self.hasher.update(text.as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
        if self.mode == TraceMode::Full {
            self.lines.push(text);
        }
    }

    pub fn lines_written(&self) -> u64 {
        self.count
    }

    pub fn finish(self) -> (String, Option<Vec<String>>) {
        let hash = hex::encode(self.hasher.finalize());
        let lines = match self.mode {
            TraceMode::Full => Some(self.lines),
            TraceMode::Hash => None,
        };
        (hash, lines)
    }
}

/// Parse a trace file's lines, skipping blanks.
pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
