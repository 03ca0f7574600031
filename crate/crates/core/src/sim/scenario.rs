//! Scenario files (TOML, `schema_version = 1`).
//!
//! A scenario either generates its population (`population.node_count`,
//! `population.types`) or lists it (`[[population.nodes]]` plus
//! `population.edges`). Apps are likewise generated (`apps.count`) or listed
//! with explicit holders (`[[apps.catalog]]`). Every section is optional.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::adversary::{Behavior, CompromisePlan};
use crate::artifact::AppId;
use crate::auth::{Quorum, DEFAULT_FANOUT};
use crate::community::{FormationParams, NodeType, Population};
use crate::crypto::{DigestWidth, DEFAULT_MIN_KEY_BITS};
use crate::trust::DEFAULT_ALPHA;
use crate::NodeId;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epochs: u32,
    /// The app store is unreachable: no fallback, no refresh, no cross-check.
    #[serde(default)]
    pub store_blocked: bool,
    #[serde(default)]
    pub population: PopulationSpec,
    #[serde(default)]
    pub formation: FormationSpec,
    #[serde(default)]
    pub trust: TrustSpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub apps: AppsSpec,
    #[serde(default)]
    pub adversary: CompromisePlan,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forgery: Option<ForgerySpec>,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            epochs: 0,
            store_blocked: false,
            population: PopulationSpec::default(),
            formation: FormationSpec::default(),
            trust: TrustSpec::default(),
            protocol: ProtocolSpec::default(),
            apps: AppsSpec::default(),
            adversary: CompromisePlan::default(),
            workload: WorkloadSpec::default(),
            forgery: None,
            metrics: MetricsSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub node_count: usize,
    /// Type name to weight.
    pub types: BTreeMap<String, f64>,
    pub key_length_bits: u32,
    pub old_device_fraction: f64,
    pub old_key_length_bits: u32,
    pub max_degree: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeSpec>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<(u32, u32)>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            node_count: 0,
            types: BTreeMap::from([("device".to_string(), 1.0)]),
            key_length_bits: 128,
            old_device_fraction: 0.0,
            old_key_length_bits: 64,
            max_degree: 8,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: u32,
    #[serde(rename = "type", default = "default_type")]
    pub node_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_length_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<Behavior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn default_type() -> String {
    "device".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationSpec {
    /// Run a proposal round every epoch.
    pub enabled: bool,
    pub beta_same: f64,
    pub beta_diff: f64,
    pub link_cost: f64,
    pub trust_weight: f64,
    pub join_rate: f64,
    pub leave_rate: f64,
    pub proposals_per_round: usize,
    pub hub_multiplier: u32,
    /// Supernodes picked after the first formation round.
    pub hub_count: usize,
}

impl Default for FormationSpec {
    fn default() -> Self {
        let p = FormationParams::default();
        FormationSpec {
            enabled: true,
            beta_same: p.beta_same,
            beta_diff: p.beta_diff,
            link_cost: p.link_cost,
            trust_weight: p.trust_weight,
            join_rate: p.join_rate,
            leave_rate: p.leave_rate,
            proposals_per_round: p.proposals_per_round,
            hub_multiplier: p.hub_multiplier,
            hub_count: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustSpec {
    pub alpha: f64,
    pub severance_threshold: f64,
}

impl Default for TrustSpec {
    fn default() -> Self {
        TrustSpec { alpha: DEFAULT_ALPHA, severance_threshold: FormationParams::default().severance_threshold }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    pub digest_width: DigestWidth,
    /// MACs attached per delivery.
    pub mac_fanout: usize,
    pub quorum: Quorum,
    pub min_key_bits: u32,
    /// Call-out radius in hops; unlimited when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hop_limit: Option<u32>,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec {
            digest_width: DigestWidth::Bits224,
            mac_fanout: DEFAULT_FANOUT,
            quorum: Quorum::default(),
            min_key_bits: DEFAULT_MIN_KEY_BITS,
            hop_limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppsSpec {
    pub count: usize,
    pub payload_bytes: usize,
    /// Chance that a node starts out holding a given app.
    pub initial_holder_fraction: f64,
    /// Chance that an honest initial holder's copy is already tampered.
    pub preinfected_fraction: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub catalog: Vec<AppSpec>,
}

impl Default for AppsSpec {
    fn default() -> Self {
        AppsSpec { count: 1, payload_bytes: 1024, initial_holder_fraction: 0.5, preinfected_fraction: 0.0, catalog: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub name: String,
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_bytes: Option<usize>,
    #[serde(default)]
    pub holders: Vec<u32>,
    #[serde(default)]
    pub tampered_holders: Vec<u32>,
}

fn default_version() -> String {
    "1.0".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Random requests per epoch on top of the listed ones.
    pub requests_per_epoch: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub requests: Vec<RequestSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub epoch: u32,
    pub node: u32,
    /// `name` or `name@version`.
    pub app: String,
}

/// Monte Carlo of forged deliveries against `verifiers` MAC checkers, each
/// compromised with probability `compromise_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgerySpec {
    pub verifiers: usize,
    pub compromise_p: f64,
    #[serde(default = "default_trials")]
    pub trials: u64,
}

fn default_trials() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    /// Emit every ledger record every epoch.
    pub trust_trajectories: bool,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        MetricsSpec { trust_trajectories: true }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn formation_params(&self) -> FormationParams {
        let f = &self.formation;
        FormationParams {
            beta_same: f.beta_same,
            beta_diff: f.beta_diff,
            link_cost: f.link_cost,
            trust_weight: f.trust_weight,
            join_rate: f.join_rate,
            leave_rate: f.leave_rate,
            proposals_per_round: f.proposals_per_round,
            severance_threshold: self.trust.severance_threshold,
            hub_multiplier: f.hub_multiplier,
        }
    }

    pub fn population(&self) -> Population {
        let p = &self.population;
        Population {
            types: p.types.iter().map(|(t, w)| (NodeType::new(t.clone()), *w)).collect(),
            key_length_bits: p.key_length_bits,
            old_device_fraction: p.old_device_fraction,
            old_key_length_bits: p.old_key_length_bits,
            max_degree: p.max_degree,
            compromise: self.adversary.clone(),
        }
    }

    /// Node ids present at setup.
    pub fn initial_ids(&self) -> Vec<NodeId> {
        if self.population.nodes.is_empty() {
            (0..self.population.node_count as u32).map(NodeId).collect()
        } else {
            let mut ids: Vec<NodeId> = self.population.nodes.iter().map(|n| NodeId(n.id)).collect();
            ids.sort();
            ids
        }
    }

    pub fn app_ids(&self) -> Vec<AppId> {
        if self.apps.catalog.is_empty() {
            (0..self.apps.count).map(|i| AppId::new(format!("app{i}"), "1.0")).collect()
        } else {
            self.apps.catalog.iter().map(|a| AppId::new(a.name.clone(), a.version.clone())).collect()
        }
    }

    pub fn resolve_app(&self, name: &str) -> Option<AppId> {
        let apps = self.app_ids();
        match name.split_once('@') {
            Some((n, v)) => apps.into_iter().find(|a| a.name == n && a.version == v),
            None => {
                let mut hits = apps.into_iter().filter(|a| a.name == name);
                let first = hits.next()?;
                hits.next().is_none().then_some(first)
            }
        }
    }

    /// Checks every range and reference; lists all offending fields at once.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut bad = Vec::new();
        let mut unit = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("{name} = {v} must lie in [0, 1]"));
            }
        };
        let p = &self.population;
        unit("population.old_device_fraction", p.old_device_fraction);
        unit("apps.initial_holder_fraction", self.apps.initial_holder_fraction);
        unit("apps.preinfected_fraction", self.apps.preinfected_fraction);
        unit("trust.severance_threshold", self.trust.severance_threshold);
        unit("formation.join_rate", self.formation.join_rate);
        unit("formation.leave_rate", self.formation.leave_rate);
        if let Some(f) = &self.forgery {
            unit("forgery.compromise_p", f.compromise_p);
        }

        if self.schema_version != SCHEMA_VERSION {
            bad.push(format!("schema_version = {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        for (name, bits) in [
            ("population.key_length_bits", p.key_length_bits),
            ("population.old_key_length_bits", p.old_key_length_bits),
        ] {
            if bits == 0 || bits % 8 != 0 {
                bad.push(format!("{name} = {bits} must be a positive multiple of 8"));
            }
        }
        if p.max_degree == 0 {
            bad.push("population.max_degree must be positive".into());
        }
        if p.nodes.is_empty() && p.node_count > 0 {
            if p.types.values().any(|w| !w.is_finite() || *w < 0.0) || p.types.values().sum::<f64>() <= 0.0 {
                bad.push("population.types weights must be nonnegative with a positive sum".into());
            }
        }

        let ids: BTreeSet<u32> = self.initial_ids().iter().map(|n| n.0).collect();
        if !p.nodes.is_empty() {
            if ids.len() != p.nodes.len() {
                bad.push("population.nodes ids must be distinct".into());
            }
            if p.node_count != 0 && p.node_count != p.nodes.len() {
                bad.push(format!("population.node_count = {} disagrees with {} listed nodes", p.node_count, p.nodes.len()));
            }
            for n in &p.nodes {
                if let Some(bits) = n.key_length_bits {
                    if bits == 0 || bits % 8 != 0 {
                        bad.push(format!("population.nodes[{}].key_length_bits must be a positive multiple of 8", n.id));
                    }
                }
                if n.max_degree == Some(0) {
                    bad.push(format!("population.nodes[{}].max_degree must be positive", n.id));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &p.edges {
            if !ids.contains(&a) || !ids.contains(&b) {
                bad.push(format!("population.edges ({a}, {b}) names an unknown node"));
            } else if a == b {
                bad.push(format!("population.edges ({a}, {b}) is a self-loop"));
            } else if !seen.insert((a.min(b), a.max(b))) {
                bad.push(format!("population.edges ({a}, {b}) is listed twice"));
            }
        }

        if let Err(e) = self.formation_params().validate() {
            bad.push(format!("formation: {e}"));
        }
        if !(self.trust.alpha > 0.0 && self.trust.alpha <= 1.0) {
            bad.push(format!("trust.alpha = {} must lie in (0, 1]", self.trust.alpha));
        }
        if self.protocol.mac_fanout == 0 {
            bad.push("protocol.mac_fanout must be positive".into());
        }
        if self.protocol.min_key_bits == 0 {
            bad.push("protocol.min_key_bits must be positive".into());
        }
        if let Err(e) = self.adversary.validate() {
            bad.push(format!("adversary: {e}"));
        }

        let a = &self.apps;
        if a.catalog.is_empty() && a.payload_bytes == 0 {
            bad.push("apps.payload_bytes must be positive".into());
        }
        let mut names = BTreeSet::new();
        for app in &a.catalog {
            let label = format!("apps.catalog[{}@{}]", app.name, app.version);
            if !names.insert((app.name.clone(), app.version.clone())) {
                bad.push(format!("{label} is listed twice"));
            }
            if app.payload_bytes == Some(0) {
                bad.push(format!("{label}.payload_bytes must be positive"));
            }
            for h in app.holders.iter().chain(&app.tampered_holders) {
                if !ids.contains(h) {
                    bad.push(format!("{label} names unknown holder {h}"));
                }
            }
            if app.holders.iter().any(|h| app.tampered_holders.contains(h)) {
                bad.push(format!("{label} lists a node as both clean and tampered holder"));
            }
        }

        for (i, r) in self.workload.requests.iter().enumerate() {
            if !ids.contains(&r.node) {
                bad.push(format!("workload.requests[{i}].node = {} is not an initial node", r.node));
            }
            if self.resolve_app(&r.app).is_none() {
                bad.push(format!("workload.requests[{i}].app = {:?} does not name exactly one app", r.app));
            }
            if r.epoch >= self.epochs {
                bad.push(format!("workload.requests[{i}].epoch = {} is past the last epoch", r.epoch));
            }
        }
        if self.workload.requests_per_epoch > 0 && self.app_ids().is_empty() {
            bad.push("workload.requests_per_epoch needs at least one app".into());
        }

        if let Some(f) = &self.forgery {
            if f.verifiers == 0 {
                bad.push("forgery.verifiers must be positive".into());
            }
        }

        if bad.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(bad))
        }
    }
}
