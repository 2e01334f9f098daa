//! Committee-based multi-valued Byzantine agreement (cMVBA) as composable,
//! event-driven state machines, plus a deterministic adversarial network
//! simulator for driving them at desk scale.
//!
//! The protocol tolerates `f < n/3` Byzantine parties. Each agreement
//! instance runs five sub-protocols in sequence:
//!
//! 1. **Committee selection** ([`committee`]): a threshold coin picks a
//!    random committee of `f + 1` parties.
//! 2. **Consistent broadcast** ([`pvcbc`]): each committee member broadcasts
//!    its proposal and collects `2f + 1` signed echoes into a proof that no
//!    conflicting payload can also be proven.
//! 3. **Propose / recommend** ([`recommend`]): proven proposals are
//!    multicast and re-recommended until every party has heard from
//!    `n - f` distinct senders.
//! 4. **Random order** ([`permutation`]): a second threshold coin, released
//!    only after recommendations settle, shuffles the committee into an
//!    examination order.
//! 5. **Sequential binary agreement** ([`abba`]): candidates are examined
//!    in that order; the first one the parties agree to accept becomes the
//!    decision for the instance.
//!
//! Every state machine is a plain `(state, event) -> (state', outputs)`
//! transition owned by a single party; all networking, scheduling and fault
//! injection live in [`sim`].

pub mod abba;
pub mod committee;
pub mod config;
pub mod crypto;
pub mod engine;
pub mod explore;
pub mod messages;
pub mod permutation;
pub mod pvcbc;
pub mod recommend;
pub mod sim;

pub use config::{ProtocolOptions, SysConfig};
pub use crypto::CryptoKit;
pub use engine::{Decision, Engine};
pub use sim::{run_simulation, AdversaryStrategy, SimError, Simulation};

/// Party index in `0..n`.
pub type PartyId = usize;

/// Agreement instance number, starting at 1.
pub type Instance = u64;
