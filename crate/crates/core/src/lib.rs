//! Community-based security for IoT app distribution.
//!
//! A requester that cannot reach (or does not trust) the app store asks its
//! community who holds an app, majority-votes over the returned fingerprints,
//! and downloads the winning variant from one supporter. The download is
//! authenticated by MACs keyed to the sender's neighbors, and every exchange
//! feeds a per-node trust ledger. Community links themselves come from a
//! request-and-approval formation game.
//!
//! The [`sim`] module wires all of this into a seeded, single-threaded
//! discrete-event engine with bandwidth accounting and metrics.

pub mod adversary;
pub mod artifact;
pub mod auth;
pub mod community;
pub mod credibility;
pub mod crypto;
mod ids;
pub mod sim;
pub mod trust;
pub mod wire;

pub use adversary::{Behavior, CompromisePlan};
pub use artifact::{AppCatalog, AppId, AppPackage, InstallState, Provenance};
pub use auth::{AcceptanceDecision, AuthPackage, DecisionReason, Quorum};
pub use community::{CommunityGraph, FormationParams, NodeProfile, NodeType};
pub use credibility::{CallOut, FingerprintReply, SuspicionNotice, VoteOutcome};
pub use crypto::{Digest, DigestWidth, KeyStore, MacKey, MacScheme, MacTag};
pub use ids::NodeId;
pub use sim::{run, EventLog, MetricsReport, Scenario};
pub use trust::{Ledger, TrustRecord};
