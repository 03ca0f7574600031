//! Community formation: typed nodes propose links to strangers and accept
//! proposals by a cost-benefit test; links carry a shared MAC key; nodes join,
//! leave, and cut ties with neighbors they stopped trusting.
//!
//! The utility of a link from `i` to `j` is linear:
//!
//! ```text
//! u(i, j) = benefit(type_i, type_j) + trust_weight * trust_i(j) - link_cost
//! ```
//!
//! where `benefit` is `beta_same` for equal types and `beta_diff` otherwise,
//! and `trust_i(j)` is `i`'s combined trust in `j` (0.5 for strangers).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{self, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Behavior, CompromisePlan};
use crate::crypto::{self, CryptoError, KeyStore, MacKey};
use crate::trust::{Ledger, STRANGER_PRIOR};
use crate::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("node {0} is already in the graph")]
    DuplicateNode(NodeId),
    #[error("node {0} cannot link to itself")]
    SelfLoop(NodeId),
    #[error("nodes {0} and {1} are already linked")]
    AlreadyLinked(NodeId, NodeId),
    #[error("node {0} is at its degree limit")]
    DegreeCap(NodeId),
    #[error("invalid profile for node {0}: {1}")]
    InvalidProfile(NodeId, &'static str),
    #[error("homophily is undefined on a graph without edges")]
    NoEdges,
    #[error("invalid formation parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeType(pub String);

impl NodeType {
    pub fn new(s: impl Into<String>) -> Self {
        NodeType(s.into())
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeProfile {
    pub id: NodeId,
    pub node_type: NodeType,
    /// Epochs since joining.
    pub age: u32,
    pub key_length_bits: u32,
    pub behavior: Behavior,
    pub max_degree: u32,
    pub hub: bool,
}

impl NodeProfile {
    pub fn new(id: NodeId, node_type: NodeType, key_length_bits: u32, max_degree: u32) -> Self {
        NodeProfile { id, node_type, age: 0, key_length_bits, behavior: Behavior::Honest, max_degree, hub: false }
    }

    pub fn with_behavior(mut self, behavior: Behavior) -> Self {
        self.behavior = behavior;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationParams {
    pub beta_same: f64,
    pub beta_diff: f64,
    pub link_cost: f64,
    pub trust_weight: f64,
    pub join_rate: f64,
    pub leave_rate: f64,
    /// Proposals each node sends per round.
    pub proposals_per_round: usize,
    /// Links are cut when either side's combined trust in the other drops below this.
    pub severance_threshold: f64,
    /// Degree-limit multiplier applied to supernodes.
    pub hub_multiplier: u32,
}

impl Default for FormationParams {
    fn default() -> Self {
        FormationParams {
            beta_same: 1.0,
            beta_diff: 0.2,
            link_cost: 0.5,
            trust_weight: 0.0,
            join_rate: 0.0,
            leave_rate: 0.0,
            proposals_per_round: 3,
            severance_threshold: 0.2,
            hub_multiplier: 4,
        }
    }
}

impl FormationParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        let nonneg = [
            ("beta_same", self.beta_same),
            ("beta_diff", self.beta_diff),
            ("link_cost", self.link_cost),
            ("trust_weight", self.trust_weight),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GraphError::InvalidParams(format!("{name} = {v} must be a nonnegative number")));
            }
        }
        let probs = [
            ("join_rate", self.join_rate),
            ("leave_rate", self.leave_rate),
            ("severance_threshold", self.severance_threshold),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(GraphError::InvalidParams(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        if self.hub_multiplier == 0 {
            return Err(GraphError::InvalidParams("hub_multiplier must be positive".into()));
        }
        Ok(())
    }
}

/// Where new nodes come from: type mix, key lengths, strategy mix.
#[derive(Clone, Debug)]
pub struct Population {
    pub types: Vec<(NodeType, f64)>,
    pub key_length_bits: u32,
    /// Share of nodes that carry `old_key_length_bits` keys instead.
    pub old_device_fraction: f64,
    pub old_key_length_bits: u32,
    pub max_degree: u32,
    pub compromise: CompromisePlan,
}

impl Population {
    /// Draws (type, key length) for a new node.
    pub fn draw_shape<R: Rng + ?Sized>(&self, rng: &mut R) -> (NodeType, u32) {
        let weights: Vec<f64> = self.types.iter().map(|t| t.1).collect();
        let node_type = match WeightedIndex::new(&weights) {
            Ok(dist) => self.types[dist.sample(rng)].0.clone(),
            Err(_) => NodeType::new("device"),
        };
        let key = if rng.random_bool(self.old_device_fraction.clamp(0.0, 1.0)) {
            self.old_key_length_bits
        } else {
            self.key_length_bits
        };
        (node_type, key)
    }
}

#[derive(Clone, Debug, Default)]
pub struct CommunityGraph {
    nodes: BTreeMap<NodeId, NodeProfile>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    keystores: BTreeMap<NodeId, KeyStore>,
    next_id: u32,
}

impl CommunityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, profile: NodeProfile) -> Result<NodeId, GraphError> {
        let id = profile.id;
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        if profile.key_length_bits == 0 {
            return Err(GraphError::InvalidProfile(id, "key length must be positive"));
        }
        if profile.max_degree == 0 {
            return Err(GraphError::InvalidProfile(id, "max degree must be positive"));
        }
        self.next_id = self.next_id.max(id.0 + 1);
        self.adjacency.insert(id, BTreeSet::new());
        self.keystores.insert(id, KeyStore::new(id));
        self.nodes.insert(id, profile);
        Ok(id)
    }

    /// Adds a node under the next unused id.
    pub fn spawn(&mut self, node_type: NodeType, key_length_bits: u32, behavior: Behavior, max_degree: u32) -> Result<NodeId, GraphError> {
        let id = NodeId(self.next_id);
        self.add_node(NodeProfile::new(id, node_type, key_length_bits, max_degree).with_behavior(behavior))
    }

    pub fn remove_node(&mut self, id: NodeId) -> Option<NodeProfile> {
        let profile = self.nodes.remove(&id)?;
        for peer in self.adjacency.remove(&id).unwrap_or_default() {
            if let Some(adj) = self.adjacency.get_mut(&peer) {
                adj.remove(&id);
            }
            if let Some(store) = self.keystores.get_mut(&peer) {
                store.remove(id);
            }
        }
        self.keystores.remove(&id);
        Some(profile)
    }

    /// Links `a` and `b` under a fresh shared key whose length is the shorter
    /// of the two devices' key lengths.
    pub fn connect<R: Rng + ?Sized>(&mut self, a: NodeId, b: NodeId, rng: &mut R) -> Result<&MacKey, GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        let pa = self.nodes.get(&a).ok_or(GraphError::UnknownNode(a))?;
        let pb = self.nodes.get(&b).ok_or(GraphError::UnknownNode(b))?;
        if self.are_linked(a, b) {
            return Err(GraphError::AlreadyLinked(a, b));
        }
        for p in [pa, pb] {
            if self.degree(p.id) >= p.max_degree as usize {
                return Err(GraphError::DegreeCap(p.id));
            }
        }
        let bits = pa.key_length_bits.min(pb.key_length_bits);
        let mut sa = self.keystores.remove(&a).expect("store exists for every node");
        let mut sb = self.keystores.remove(&b).expect("store exists for every node");
        let result = crypto::pair(a, b, &mut sa, &mut sb, rng, bits);
        self.keystores.insert(a, sa);
        self.keystores.insert(b, sb);
        result?;
        self.adjacency.get_mut(&a).expect("adjacency").insert(b);
        self.adjacency.get_mut(&b).expect("adjacency").insert(a);
        Ok(self.shared_key(a, b).expect("just paired"))
    }

    pub fn disconnect(&mut self, a: NodeId, b: NodeId) -> bool {
        let removed = self.adjacency.get_mut(&a).is_some_and(|s| s.remove(&b));
        if removed {
            self.adjacency.get_mut(&b).map(|s| s.remove(&a));
            self.keystores.get_mut(&a).map(|s| s.remove(b));
            self.keystores.get_mut(&b).map(|s| s.remove(a));
        }
        removed
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn profile(&self, id: NodeId) -> Option<&NodeProfile> {
        self.nodes.get(&id)
    }

    pub fn profile_mut(&mut self, id: NodeId) -> Option<&mut NodeProfile> {
        self.nodes.get_mut(&id)
    }

    pub fn behavior(&self, id: NodeId) -> Behavior {
        self.nodes.get(&id).map(|p| p.behavior).unwrap_or_default()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeProfile> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn are_linked(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// Every edge once, as `(low, high)`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency.iter().flat_map(|(a, s)| s.range(*a..).map(move |b| (*a, *b)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn keystore(&self, id: NodeId) -> Option<&KeyStore> {
        self.keystores.get(&id)
    }

    pub fn keystore_mut(&mut self, id: NodeId) -> Option<&mut KeyStore> {
        self.keystores.get_mut(&id)
    }

    pub fn shared_key(&self, a: NodeId, b: NodeId) -> Option<&MacKey> {
        self.keystores.get(&a)?.get(b)
    }

    /// Nodes within `hop_limit` hops of `from` (unbounded when `None`),
    /// excluding `from`, in id order.
    pub fn reachable_from(&self, from: NodeId, hop_limit: Option<u32>) -> Vec<NodeId> {
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([(from, 0u32)]);
        while let Some((n, hops)) = queue.pop_front() {
            if hop_limit.is_some_and(|h| hops >= h) {
                continue;
            }
            for m in self.neighbors(n) {
                if seen.insert(m) {
                    queue.push_back((m, hops + 1));
                }
            }
        }
        seen.remove(&from);
        seen.into_iter().collect()
    }

    pub fn age_all(&mut self) {
        for p in self.nodes.values_mut() {
            p.age += 1;
        }
    }

    /// Structural invariants: symmetric adjacency, no self-loops, degree
    /// limits, and one shared key per edge (no key without an edge).
    pub fn check_invariants(&self) -> Result<(), String> {
        for (a, adj) in &self.adjacency {
            let pa = self.nodes.get(a).ok_or(format!("adjacency for missing node {a}"))?;
            if adj.contains(a) {
                return Err(format!("self-loop at {a}"));
            }
            if adj.len() > pa.max_degree as usize {
                return Err(format!("node {a} has degree {} > {}", adj.len(), pa.max_degree));
            }
            let store = self.keystores.get(a).ok_or(format!("no keystore for {a}"))?;
            if store.len() != adj.len() {
                return Err(format!("node {a}: {} keys for {} edges", store.len(), adj.len()));
            }
            for b in adj {
                if !self.nodes.contains_key(b) {
                    return Err(format!("edge {a}-{b} to missing node"));
                }
                if !self.are_linked(*b, *a) {
                    return Err(format!("edge {a}-{b} is one-directional"));
                }
                match (store.get(*b), self.shared_key(*b, *a)) {
                    (Some(k1), Some(k2)) if k1 == k2 => {}
                    _ => return Err(format!("edge {a}-{b} lacks a symmetric key")),
                }
            }
        }
        if self.adjacency.len() != self.nodes.len() || self.keystores.len() != self.nodes.len() {
            return Err("node, adjacency and keystore maps disagree".into());
        }
        Ok(())
    }

    /// One `id,id,type,type` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (a, b) in self.edges() {
            let ta = &self.nodes[&a].node_type;
            let tb = &self.nodes[&b].node_type;
            writeln!(out, "{a},{b},{ta},{tb}")?;
        }
        Ok(())
    }
}

/// Value to `i` of linking with `j`, judged with `i`'s own ledger.
pub fn marginal_utility(i: &NodeProfile, j: &NodeProfile, ledger: Option<&Ledger>, params: &FormationParams) -> f64 {
    debug_assert_ne!(i.id, j.id);
    let benefit = if i.node_type == j.node_type { params.beta_same } else { params.beta_diff };
    let trust = ledger.map_or(STRANGER_PRIOR, |l| l.combined(j.id));
    benefit + params.trust_weight * trust - params.link_cost
}

/// One request-and-approval round. Nodes propose in seeded random order to
/// their top `proposals_per_round` strangers with positive utility; a target
/// accepts iff its own utility toward the proposer is positive and it has
/// spare degree. Returns the links formed.
pub fn propose_and_approve<R: Rng + ?Sized>(
    graph: &mut CommunityGraph,
    params: &FormationParams,
    ledgers: &BTreeMap<NodeId, Ledger>,
    rng: &mut R,
) -> Result<Vec<(NodeId, NodeId)>, GraphError> {
    let mut order: Vec<NodeId> = graph.node_ids().collect();
    order.shuffle(rng);
    let mut formed = Vec::new();
    for i in order {
        let pi = graph.nodes[&i].clone();
        if graph.degree(i) >= pi.max_degree as usize {
            continue;
        }
        let li = ledgers.get(&i);
        let mut candidates: Vec<(f64, u64, NodeId)> = graph
            .nodes
            .values()
            .filter(|pj| pj.id != i && !graph.are_linked(i, pj.id))
            .map(|pj| (marginal_utility(&pi, pj, li, params), rng.random::<u64>(), pj.id))
            .filter(|(u, _, _)| *u > 0.0)
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, _, j) in candidates.into_iter().take(params.proposals_per_round) {
            if graph.degree(i) >= pi.max_degree as usize {
                break;
            }
            let pj = &graph.nodes[&j];
            if graph.degree(j) >= pj.max_degree as usize {
                continue;
            }
            if marginal_utility(pj, &pi, ledgers.get(&j), params) <= 0.0 {
                continue;
            }
            graph.connect(i, j, rng)?;
            formed.push((i.min(j), i.max(j)));
        }
    }
    Ok(formed)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChurnReport {
    pub severed: Vec<(NodeId, NodeId)>,
    pub departed: Vec<NodeId>,
    pub joined: Vec<NodeId>,
}

/// Severance, departures, then at most one arrival.
pub fn churn<R: Rng + ?Sized>(
    graph: &mut CommunityGraph,
    params: &FormationParams,
    ledgers: &BTreeMap<NodeId, Ledger>,
    population: &Population,
    rng: &mut R,
) -> Result<ChurnReport, GraphError> {
    let mut report = ChurnReport::default();
    let distrusts = |owner: NodeId, peer: NodeId| {
        ledgers.get(&owner).is_some_and(|l| l.combined(peer) < params.severance_threshold)
    };
    let doomed: Vec<(NodeId, NodeId)> = graph.edges().filter(|(a, b)| distrusts(*a, *b) || distrusts(*b, *a)).collect();
    for (a, b) in doomed {
        graph.disconnect(a, b);
        report.severed.push((a, b));
    }

    let ids: Vec<NodeId> = graph.node_ids().collect();
    for id in ids {
        if rng.random_bool(params.leave_rate) {
            graph.remove_node(id);
            report.departed.push(id);
        }
    }

    if rng.random_bool(params.join_rate) {
        let (node_type, key_bits) = population.draw_shape(rng);
        let behavior = population.compromise.draw(rng);
        let id = graph.spawn(node_type, key_bits, behavior, population.max_degree)?;
        report.joined.push(id);
    }
    Ok(report)
}

/// Share of same-type edges minus the share expected under random mixing.
pub fn homophily_index(graph: &CommunityGraph) -> Result<f64, GraphError> {
    let edges = graph.edge_count();
    if edges == 0 {
        return Err(GraphError::NoEdges);
    }
    let same = graph
        .edges()
        .filter(|(a, b)| graph.nodes[a].node_type == graph.nodes[b].node_type)
        .count();
    let mut counts: BTreeMap<&NodeType, f64> = BTreeMap::new();
    for p in graph.nodes.values() {
        *counts.entry(&p.node_type).or_default() += 1.0;
    }
    let n = graph.node_count() as f64;
    let expected = counts.values().map(|c| c * (c - 1.0)).sum::<f64>() / (n * (n - 1.0));
    Ok(same as f64 / edges as f64 - expected)
}

/// Marks the `count` highest-degree nodes (ties to the smaller id) as hubs and
/// raises their degree limit by `multiplier`. Existing hubs are not raised twice.
pub fn designate_supernodes(graph: &mut CommunityGraph, count: usize, multiplier: u32) -> BTreeSet<NodeId> {
    let mut ranked: Vec<(usize, NodeId)> = graph.node_ids().map(|id| (graph.degree(id), id)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let hubs: BTreeSet<NodeId> = ranked.into_iter().take(count).map(|(_, id)| id).collect();
    for id in &hubs {
        let p = graph.nodes.get_mut(id).expect("ranked from graph");
        if !p.hub {
            p.hub = true;
            p.max_degree = p.max_degree.saturating_mul(multiplier);
        }
    }
    hubs
}
