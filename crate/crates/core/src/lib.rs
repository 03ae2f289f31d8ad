//! Secure cooperative localization for IoT deployments.
//!
//! Nodes range each other with RSSI (one hop) or DV-Hop (several hops),
//! trilaterate, and publish signed position claims to a proof-of-work
//! ledger. Miners only admit a claim whose listed neighbors sit within radio
//! range of the claimed point, which keeps forged positions out of later
//! nodes' reference sets.

pub mod adversary;
pub mod chain;
pub mod experiment;
pub mod geo;
pub mod identity;
pub mod netsim;

pub use chain::{Block, Ledger, LocationClaim, Verdict, VerificationOutcome, VerifyPolicy};
pub use experiment::{CellResult, ExperimentPlan};
pub use geo::{DistanceEstimate, PathLossParams, Position, RangeMethod};
pub use identity::{Digest, KeyPair, NodeId};
pub use netsim::{Mode, RunResult, SimConfig, Topology};
