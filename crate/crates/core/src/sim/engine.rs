//! The epoch loop and the retrieval protocol as the engine runs it.
//!
//! Per epoch: store refresh of flagged nodes, churn, one formation round,
//! the epoch's retrievals, then a metrics snapshot.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::events::{Event, EventKind, EventLog};
use super::metrics::{
    account_overhead, assumptions, EpochMetrics, MetricsReport, RetrievalOutcome, RetrievalRecord, RunMetadata,
    TrustSample, VoteKind,
};
use super::scenario::Scenario;
use super::{seed, SimError};
use crate::adversary::{assign_behaviors, intercept, Behavior, InterceptContext, Outbound};
use crate::artifact::{tamper, AppCatalog, AppId, AppPackage, InstallState};
use crate::auth::{authenticate, build_auth_package, forgery_study, AuthError, DecisionReason};
use crate::community::{
    churn, designate_supernodes, homophily_index, propose_and_approve, CommunityGraph, FormationParams, NodeProfile,
    NodeType, Population,
};
use crate::credibility::{
    broadcast_call_out, choose_source, filter_old_devices, majority_vote, notify_dissenters, RoundCounter, VoteError,
};
use crate::crypto::{Digest, MacScheme};
use crate::trust::Ledger;
use crate::wire::WireEncode;
use crate::NodeId;

/// Author of every tampered variant: an attacker outside the community.
pub const EXTERNAL_ATTACKER: NodeId = NodeId(u32::MAX);

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub log: EventLog,
    pub metrics: MetricsReport,
    pub graph: CommunityGraph,
    pub installs: InstallState,
    pub ledgers: BTreeMap<NodeId, Ledger>,
}

pub fn run(scenario: &Scenario) -> Result<(EventLog, MetricsReport), SimError> {
    let sim = simulate(scenario)?;
    Ok((sim.log, sim.metrics))
}

pub fn simulate(scenario: &Scenario) -> Result<Simulation, SimError> {
    let mut engine = Engine::setup(scenario)?;
    for epoch in 0..scenario.epochs {
        engine.epoch(epoch)?;
    }
    engine.finish()
}

struct Streams {
    formation: ChaCha8Rng,
    churn: ChaCha8Rng,
    workload: ChaCha8Rng,
    keys: ChaCha8Rng,
    source: ChaCha8Rng,
    auth: ChaCha8Rng,
}

struct Engine<'s> {
    s: &'s Scenario,
    params: FormationParams,
    population: Population,
    scheme: MacScheme,
    app_ids: Vec<AppId>,
    graph: CommunityGraph,
    catalog: AppCatalog,
    tampered: BTreeMap<AppId, AppPackage>,
    installs: InstallState,
    ledgers: BTreeMap<NodeId, Ledger>,
    flagged: BTreeSet<(NodeId, AppId)>,
    initial_infections: usize,
    hubs_designated: bool,
    rounds: RoundCounter,
    rng: Streams,
    log: EventLog,
    current: EpochMetrics,
    epochs: Vec<EpochMetrics>,
    retrievals: Vec<RetrievalRecord>,
    trust: Vec<TrustSample>,
}

impl<'s> Engine<'s> {
    fn setup(s: &'s Scenario) -> Result<Self, SimError> {
        s.validate()?;
        let root = s.seed;
        let population = s.population();
        let mut plan = s.adversary.clone();
        plan.seed ^= seed::derive(root, seed::BEHAVIORS);
        let ids = s.initial_ids();
        let behaviors = assign_behaviors(ids.iter().copied(), &plan)?;

        let mut graph = CommunityGraph::new();
        let pop = &s.population;
        if pop.nodes.is_empty() {
            let mut rng = seed::stream(root, seed::POPULATION);
            for id in &ids {
                let (node_type, key_bits) = population.draw_shape(&mut rng);
                graph.add_node(NodeProfile::new(*id, node_type, key_bits, pop.max_degree).with_behavior(behaviors[id]))?;
            }
        } else {
            for n in &pop.nodes {
                let id = NodeId(n.id);
                let profile = NodeProfile::new(
                    id,
                    NodeType::new(n.node_type.clone()),
                    n.key_length_bits.unwrap_or(pop.key_length_bits),
                    n.max_degree.unwrap_or(pop.max_degree),
                )
                .with_behavior(n.behavior.unwrap_or(behaviors[&id]));
                graph.add_node(profile)?;
            }
        }

        let mut rng = Streams {
            formation: seed::stream(root, seed::FORMATION),
            churn: seed::stream(root, seed::CHURN),
            workload: seed::stream(root, seed::WORKLOAD),
            keys: seed::stream(root, seed::KEYS),
            source: seed::stream(root, seed::SOURCE),
            auth: seed::stream(root, seed::AUTH),
        };
        for &(a, b) in &pop.edges {
            graph.connect(NodeId(a), NodeId(b), &mut rng.keys)?;
        }

        let mut ledgers = BTreeMap::new();
        for id in &ids {
            ledgers.insert(*id, Ledger::new(*id, s.trust.alpha)?);
        }

        let app_ids = s.app_ids();
        let mut catalog = AppCatalog::new();
        let mut tampered = BTreeMap::new();
        let mut payload_rng = seed::stream(root, seed::PAYLOADS);
        let mut tamper_rng = seed::stream(root, seed::TAMPER);
        for (i, app) in app_ids.iter().enumerate() {
            let size = s.apps.catalog.get(i).and_then(|a| a.payload_bytes).unwrap_or(s.apps.payload_bytes);
            let mut payload = vec![0u8; size];
            payload_rng.fill_bytes(&mut payload);
            let clean = catalog.publish_clean(app.clone(), payload)?;
            tampered.insert(app.clone(), tamper(&clean, EXTERNAL_ATTACKER, &mut tamper_rng));
        }

        let mut installs = InstallState::new();
        if s.apps.catalog.is_empty() {
            let mut rng = seed::stream(root, seed::HOLDINGS);
            for id in &ids {
                for app in &app_ids {
                    let clean = catalog.clean(app).expect("published");
                    let pkg = match graph.behavior(*id) {
                        Behavior::TamperedServer => Some(&tampered[app]),
                        Behavior::TocTouSwapper => Some(clean),
                        _ if rng.random_bool(s.apps.initial_holder_fraction) => {
                            Some(if rng.random_bool(s.apps.preinfected_fraction) { &tampered[app] } else { clean })
                        }
                        _ => None,
                    };
                    if let Some(p) = pkg {
                        installs.install(*id, p.clone());
                    }
                }
            }
        } else {
            for (spec, app) in s.apps.catalog.iter().zip(&app_ids) {
                for h in &spec.holders {
                    installs.install(NodeId(*h), catalog.clean(app).expect("published").clone());
                }
                for h in &spec.tampered_holders {
                    installs.install(NodeId(*h), tampered[app].clone());
                }
            }
        }

        Ok(Engine {
            s,
            params: s.formation_params(),
            population,
            scheme: MacScheme::new(s.protocol.digest_width, s.protocol.min_key_bits),
            app_ids,
            graph,
            catalog,
            tampered,
            ledgers,
            flagged: BTreeSet::new(),
            initial_infections: installs.infection_count(),
            installs,
            hubs_designated: false,
            rounds: RoundCounter::default(),
            rng,
            log: EventLog::new(),
            current: EpochMetrics::default(),
            epochs: Vec::new(),
            retrievals: Vec::new(),
            trust: Vec::new(),
        })
    }

    fn epoch(&mut self, epoch: u32) -> Result<(), SimError> {
        self.current = EpochMetrics { epoch, ..Default::default() };
        self.refresh(epoch);
        self.graph.age_all();
        self.churn(epoch)?;
        if self.s.formation.enabled {
            self.form(epoch)?;
        }
        for (node, app) in self.requests(epoch) {
            if self.graph.contains(node) {
                self.retrieve(epoch, node, &app)?;
            }
        }
        self.snapshot(epoch);
        Ok(())
    }

    /// Flagged honest nodes reinstall from the store if it is reachable.
    fn refresh(&mut self, epoch: u32) {
        if self.s.store_blocked {
            return;
        }
        for (node, app) in std::mem::take(&mut self.flagged) {
            if !self.graph.contains(node) || self.graph.behavior(node).holds_tampered() {
                continue;
            }
            let clean = self.catalog.clean(&app).expect("published").clone();
            let digest = clean.fingerprint(self.scheme.width);
            self.installs.install(node, clean);
            self.log.push(Event::new(EventKind::StoreRefresh, epoch, vec![node]).app(&app).digest(&digest));
            self.current.refreshes += 1;
        }
    }

    fn churn(&mut self, epoch: u32) -> Result<(), SimError> {
        let report = churn(&mut self.graph, &self.params, &self.ledgers, &self.population, &mut self.rng.churn)?;
        for (a, b) in &report.severed {
            self.log.push(Event::new(EventKind::LinkSevered, epoch, vec![*a, *b]));
        }
        for id in &report.departed {
            self.installs.remove_node(*id);
            self.ledgers.remove(id);
            for l in self.ledgers.values_mut() {
                l.forget(*id);
            }
            self.flagged.retain(|(n, _)| n != id);
            self.log.push(Event::new(EventKind::NodeLeft, epoch, vec![*id]));
        }
        for id in &report.joined {
            self.ledgers.insert(*id, Ledger::new(*id, self.s.trust.alpha)?);
            for app in &self.app_ids {
                match self.graph.behavior(*id) {
                    Behavior::TamperedServer => {
                        self.installs.install(*id, self.tampered[app].clone());
                    }
                    Behavior::TocTouSwapper => {
                        self.installs.install(*id, self.catalog.clean(app).expect("published").clone());
                    }
                    _ => {}
                }
            }
            self.log.push(Event::new(EventKind::NodeJoined, epoch, vec![*id]).detail(self.graph.behavior(*id).to_string()));
        }
        self.current.severed = report.severed.len() as u64;
        self.current.departed = report.departed.len() as u64;
        self.current.joined = report.joined.len() as u64;
        Ok(())
    }

    fn form(&mut self, epoch: u32) -> Result<(), SimError> {
        let formed = propose_and_approve(&mut self.graph, &self.params, &self.ledgers, &mut self.rng.formation)?;
        for (a, b) in &formed {
            self.log.push(Event::new(EventKind::LinkFormed, epoch, vec![*a, *b]));
        }
        self.current.formed = formed.len() as u64;
        if self.s.formation.hub_count > 0 && !self.hubs_designated {
            let hubs = designate_supernodes(&mut self.graph, self.s.formation.hub_count, self.params.hub_multiplier);
            self.log.push(Event::new(EventKind::HubDesignated, epoch, hubs.into_iter().collect()));
            self.hubs_designated = true;
        }
        Ok(())
    }

    /// Listed requests for this epoch, then the random ones. Tampered servers
    /// never ask.
    fn requests(&mut self, epoch: u32) -> Vec<(NodeId, AppId)> {
        let mut out: Vec<(NodeId, AppId)> = self
            .s
            .workload
            .requests
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| (NodeId(r.node), self.s.resolve_app(&r.app).expect("validated")))
            .collect();
        let askers: Vec<NodeId> = self.graph.nodes().filter(|p| !p.behavior.holds_tampered()).map(|p| p.id).collect();
        if askers.is_empty() || self.app_ids.is_empty() {
            return out;
        }
        for _ in 0..self.s.workload.requests_per_epoch {
            let node = *askers.choose(&mut self.rng.workload).expect("nonempty");
            let app = self.app_ids[self.rng.workload.random_range(0..self.app_ids.len())].clone();
            out.push((node, app));
        }
        out
    }

    fn retrieve(&mut self, epoch: u32, requester: NodeId, app: &AppId) -> Result<(), SimError> {
        let id = self.retrievals.len() as u64;
        let start = self.log.len();
        let width = self.scheme.width;
        let hop = self.s.protocol.hop_limit;
        let clean_digest = self.catalog.clean_digest(app, width).expect("published");
        let ev = |kind, parts: Vec<NodeId>| Event::new(kind, epoch, parts).retrieval(id).app(app);

        // Steps 1-2: call-out and fingerprint replies.
        let call = self.rounds.call_out(requester, app.clone());
        self.log.push(ev(EventKind::CallOut, vec![requester]).sizes(call.wire_bytes(), 0, 0));
        let replies = broadcast_call_out(&call, &self.graph, &self.installs, &self.catalog, width, hop);
        for r in &replies {
            let bits = r.digest.width_bits() as u64;
            self.log.push(
                ev(EventKind::FingerprintReply, vec![r.responder, requester]).digest(&r.digest).sizes(r.wire_bytes(), bits, 0),
            );
        }
        let replied: BTreeSet<NodeId> = replies.iter().map(|r| r.responder).collect();
        let ledger = self.ledgers.get_mut(&requester).expect("every node has a ledger");
        for n in self.graph.reachable_from(requester, hop) {
            if self.installs.holds(n, app) {
                ledger.update_response(n, replied.contains(&n))?;
            }
        }

        let responders = replies.len();
        let (kept, removed) = filter_old_devices(replies, self.scheme.min_key_bits);
        let kept_ids: Vec<NodeId> = kept.iter().map(|r| r.responder).collect();
        let mut rec = RetrievalRecord {
            id,
            epoch,
            requester,
            app_id: app.clone(),
            responders,
            filtered_out: removed.len(),
            vote: VoteKind::NoSource,
            majority_clean: None,
            subjective_trust: ledger.subjective_trust(&kept_ids).ok(),
            source: None,
            verifiers: 0,
            positive_verdicts: 0,
            decision: None,
            outcome: RetrievalOutcome::Aborted,
            notices: 0,
            false_accusations: 0,
            overhead: Default::default(),
        };

        // Steps 3-4: vote and notify.
        let outcome = match majority_vote(&kept) {
            Ok(o) => o,
            Err(e) => {
                let detail = match e {
                    VoteError::NoSource => "no-source".to_string(),
                    VoteError::NoMajority { classes, size } => {
                        rec.vote = VoteKind::Tie;
                        format!("tie: {classes} classes of {size}")
                    }
                };
                self.log.push(ev(EventKind::Vote, vec![requester]).detail(detail));
                return self.fall_back(rec, start, "no majority");
            }
        };
        rec.vote = if outcome.unanimous { VoteKind::Unanimous } else { VoteKind::Split };
        rec.majority_clean = Some(outcome.majority_digest == clean_digest);
        self.log.push(
            ev(EventKind::Vote, outcome.supporters.clone())
                .digest(&outcome.majority_digest)
                .detail(format!("{}-of-{}", outcome.supporters.len(), kept.len())),
        );
        for r in &kept {
            ledger.update_correctness(r.responder, r.digest == outcome.majority_digest)?;
        }
        for notice in notify_dissenters(&outcome, requester, app) {
            self.log.push(
                ev(EventKind::SuspicionNotice, vec![requester, notice.target])
                    .digest(&notice.suspected_digest)
                    .sizes(notice.wire_bytes(), 0, 0),
            );
            rec.notices += 1;
            if self.installs.get(notice.target, app).is_some_and(|p| !p.is_tampered()) {
                rec.false_accusations += 1;
            }
            self.flagged.insert((notice.target, app.clone()));
        }
        if !self.s.store_blocked && outcome.majority_digest != clean_digest {
            return self.fall_back(rec, start, "majority digest differs from the store's");
        }

        // Step 5: download and multipath authentication.
        let source = choose_source(&outcome, &mut self.rng.source);
        rec.source = Some(source);
        let Some(pkg) = self.installs.get(source, app).cloned() else {
            return self.fall_back(rec, start, "source no longer holds the app");
        };
        let auth = match build_auth_package(
            source,
            pkg,
            &self.graph,
            &self.scheme,
            self.s.protocol.mac_fanout,
            &[requester],
            &mut self.rng.auth,
        ) {
            Ok(a) => a,
            Err(AuthError::NoVerifiers(_)) => {
                rec.decision = Some(DecisionReason::NoVerifiers);
                self.log.push(ev(EventKind::Decision, vec![requester, source]).flag(false).detail("no-verifiers"));
                return self.fall_back(rec, start, "source has no verifiers");
            }
            Err(e) => return Err(e.into()),
        };
        let ctx = InterceptContext { clean_digest: Some(&clean_digest), tampered: self.tampered.get(app) };
        let delivered = match intercept(self.graph.behavior(source), Outbound::AppDelivery(auth), &ctx) {
            Some(Outbound::AppDelivery(a)) => a,
            _ => return self.fall_back(rec, start, "source did not deliver"),
        };
        self.log.push(
            ev(EventKind::AppDelivery, vec![source, requester])
                .digest(&delivered.claimed_digest)
                .sizes(delivered.wire_bytes(), delivered.mac_block_bits(), delivered.package.payload().len()),
        );

        let out = authenticate(requester, &delivered, &outcome.majority_digest, &self.graph, &self.scheme, self.s.protocol.quorum);
        for req in &out.exchange.requests {
            let bits = (req.digest.width_bits() + req.tag.width_bits()) as u64;
            self.log.push(
                ev(EventKind::VerifyRequest, vec![requester, req.verifier]).digest(&req.digest).sizes(req.wire_bytes(), bits, 0),
            );
        }
        for rep in &out.exchange.replies {
            self.log.push(ev(EventKind::VerifyReply, vec![rep.verifier, requester]).flag(rep.verdict).sizes(rep.wire_bytes(), 0, 0));
        }
        let decision = out.decision;
        let ledger = self.ledgers.get_mut(&requester).expect("every node has a ledger");
        let answered: BTreeSet<NodeId> = out.exchange.replies.iter().map(|r| r.verifier).collect();
        for req in &out.exchange.requests {
            ledger.update_response(req.verifier, answered.contains(&req.verifier))?;
        }
        for rep in &out.exchange.replies {
            ledger.update_correctness(rep.verifier, rep.verdict == decision.accepted)?;
        }
        rec.verifiers = out.exchange.requests.len();
        rec.positive_verdicts = decision.positive_verdicts;
        rec.decision = Some(decision.reason);
        self.log.push(
            ev(EventKind::Decision, vec![requester, source])
                .flag(decision.accepted)
                .detail(format!("{:?}", decision.reason).to_lowercase()),
        );
        if !decision.accepted {
            return self.fall_back(rec, start, "delivery rejected");
        }
        let tampered = delivered.package.is_tampered();
        let digest = delivered.package.fingerprint(width);
        self.installs.install(requester, delivered.package);
        self.log.push(ev(EventKind::Install, vec![requester, source]).digest(&digest).flag(tampered));
        rec.outcome = if tampered { RetrievalOutcome::InstalledTampered } else { RetrievalOutcome::InstalledClean };
        self.close(rec, start);
        Ok(())
    }

    /// Store download if reachable, otherwise the retrieval is abandoned.
    fn fall_back(&mut self, mut rec: RetrievalRecord, start: usize, why: &str) -> Result<(), SimError> {
        let ev = Event::new(EventKind::Aborted, rec.epoch, vec![rec.requester]).retrieval(rec.id).app(&rec.app_id).detail(why);
        if self.s.store_blocked {
            self.log.push(ev);
            rec.outcome = RetrievalOutcome::Aborted;
        } else {
            let clean = self.catalog.clean(&rec.app_id).expect("published").clone();
            let digest = clean.fingerprint(self.scheme.width);
            self.installs.install(rec.requester, clean);
            self.log.push(Event { kind: EventKind::StoreFetch, ..ev }.digest(&digest));
            rec.outcome = RetrievalOutcome::StoreFallback;
        }
        self.close(rec, start);
        Ok(())
    }

    fn close(&mut self, mut rec: RetrievalRecord, start: usize) {
        rec.overhead = account_overhead(&self.log.entries()[start..]);
        let m = &mut self.current;
        m.retrievals += 1;
        m.votes.add(rec.vote);
        match rec.outcome {
            RetrievalOutcome::InstalledClean => m.installed_clean += 1,
            RetrievalOutcome::InstalledTampered => m.installed_tampered += 1,
            RetrievalOutcome::StoreFallback => m.store_fallbacks += 1,
            RetrievalOutcome::Aborted => m.aborted += 1,
        }
        m.notices += rec.notices as u64;
        m.false_accusations += rec.false_accusations as u64;
        m.overhead_bits += rec.overhead.total_bits;
        self.retrievals.push(rec);
    }

    fn snapshot(&mut self, epoch: u32) {
        let mut m = std::mem::take(&mut self.current);
        m.nodes = self.graph.node_count();
        m.edges = self.graph.edge_count();
        m.infections = self.installs.infection_count();
        m.homophily = homophily_index(&self.graph).ok();
        self.epochs.push(m);
        if self.s.metrics.trust_trajectories {
            for (owner, ledger) in &self.ledgers {
                for (peer, r) in ledger.records() {
                    self.trust.push(TrustSample {
                        epoch,
                        owner: *owner,
                        peer,
                        resp_prob: r.resp_prob,
                        cond_trust: r.cond_trust,
                        combined: r.combined(),
                    });
                }
            }
        }
    }

    fn finish(self) -> Result<Simulation, SimError> {
        let s = self.s;
        let forgery = match &s.forgery {
            Some(f) => Some(forgery_study(
                f.verifiers,
                f.compromise_p,
                s.protocol.quorum,
                f.trials,
                seed::derive(s.seed, seed::FORGERY),
                &self.scheme,
            )?),
            None => None,
        };
        let digest: Digest = self.log.digest();
        let metrics = MetricsReport {
            metadata: RunMetadata {
                seed: s.seed,
                epochs: s.epochs,
                initial_nodes: s.initial_ids().len(),
                initial_infections: self.initial_infections,
                log_digest: digest.to_hex(),
                assumptions: assumptions(),
                scenario: s.clone(),
            },
            epochs: self.epochs,
            retrievals: self.retrievals,
            trust: self.trust,
            forgery,
        };
        Ok(Simulation { log: self.log, metrics, graph: self.graph, installs: self.installs, ledgers: self.ledgers })
    }
}
