//! Seeded discrete-event simulation of a community running the protocol.
//!
//! [`run`] takes a [`Scenario`] and returns the [`EventLog`] and
//! [`MetricsReport`]; the same scenario and seed always give the same log
//! digest. [`write_run`] lays a finished run out on disk.

mod engine;
mod events;
mod metrics;
mod output;
mod scenario;
pub mod seed;
mod sweep;

use thiserror::Error;

pub use engine::{run, simulate, Simulation, EXTERNAL_ATTACKER};
pub use events::{Event, EventKind, EventLog};
pub use metrics::{
    account_overhead, BandwidthModel, EpochMetrics, MetricsLine, MetricsReport, OverheadRecord, RetrievalOutcome, RetrievalRecord,
    RunMetadata, Summary, TrustSample, VoteKind, VoteTally,
};
pub use output::{load_run, write_run, RunFiles};
pub use scenario::{
    AppSpec, AppsSpec, ForgerySpec, FormationSpec, MetricsSpec, NodeSpec, PopulationSpec, ProtocolSpec, RequestSpec,
    Scenario, TrustSpec, WorkloadSpec, SCHEMA_VERSION,
};
pub use sweep::{apply, sweep, Grid, SweepReport, SweepRow, PARAMETERS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("unknown sweep parameter {0:?}")]
    UnknownParameter(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Graph(#[from] crate::community::GraphError),
    #[error(transparent)]
    Auth(#[from] crate::auth::AuthError),
    #[error(transparent)]
    Trust(#[from] crate::trust::TrustError),
    #[error(transparent)]
    Artifact(#[from] crate::artifact::ArtifactError),
    #[error(transparent)]
    Adversary(#[from] crate::adversary::AdversaryError),
}

impl From<toml::de::Error> for SimError {
    fn from(e: toml::de::Error) -> Self {
        SimError::Config(e.to_string())
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SimError {
    fn from(e: serde_json::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
