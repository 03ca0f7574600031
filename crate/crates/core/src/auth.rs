//! Multipath authentication of the download.
//!
//! The source attaches one MAC per sampled neighbor, each over the canonical
//! encoding of `(app_id, fingerprint(payload))` under the key it shares with
//! that neighbor. The requester first checks that the payload hashes to the
//! claimed digest and that the claim matches the digest it voted for, then
//! asks each listed neighbor to check its MAC and accepts on a strict quorum
//! of positive verdicts.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::adversary::{intercept, Behavior, InterceptContext, Outbound};
use crate::artifact::{tamper, AppCatalog, AppId, AppPackage};
use crate::community::{CommunityGraph, NodeProfile, NodeType};
use crate::crypto::{CryptoError, Digest, DigestWidth, MacScheme, MacTag};
use crate::wire::{self, WireEncode};
use crate::NodeId;

pub const DEFAULT_FANOUT: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("sender {0} has no eligible neighbor to vouch for it")]
    NoVerifiers(NodeId),
    #[error("invalid quorum {0:?}: expected a fraction in [0, 1)")]
    InvalidQuorum(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Acceptance threshold: accept iff `positive > quorum * polled`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quorum(Ratio<u64>);

impl Default for Quorum {
    fn default() -> Self {
        Quorum(Ratio::new(1, 2))
    }
}

impl Quorum {
    pub fn new(numer: u64, denom: u64) -> Result<Self, AuthError> {
        if denom == 0 || numer >= denom {
            return Err(AuthError::InvalidQuorum(format!("{numer}/{denom}")));
        }
        Ok(Quorum(Ratio::new(numer, denom)))
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn accepts(&self, positive: usize, polled: usize) -> bool {
        positive as u128 * *self.0.denom() as u128 > *self.0.numer() as u128 * polled as u128
    }
}

impl fmt::Display for Quorum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for Quorum {
    type Err = AuthError;

    /// Accepts `a/b` or a plain decimal such as `0.7` (parsed exactly).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AuthError::InvalidQuorum(s.to_string());
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return Quorum::new(n, d).map_err(|_| bad());
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        let denom = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let numer = int.checked_mul(denom).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
        Quorum::new(numer, denom).map_err(|_| bad())
    }
}

impl Serialize for Quorum {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quorum {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        let text = match Raw::deserialize(deserializer)? {
            Raw::Text(s) => s,
            Raw::Number(x) => format!("{x}"),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// The app as delivered by its source, with neighbor MACs attached.
#[derive(Clone, Debug, PartialEq)]
pub struct AuthPackage {
    pub sender: NodeId,
    pub package: AppPackage,
    pub claimed_digest: Digest,
    /// Verifier ids are distinct and ascending.
    pub macs: Vec<(NodeId, MacTag)>,
}

impl AuthPackage {
    /// Digest-and-tag bits attached to the payload.
    pub fn mac_block_bits(&self) -> u64 {
        self.macs.iter().map(|(_, t)| t.width_bits() as u64).sum()
    }
}

impl WireEncode for AuthPackage {
    fn encode_into(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, wire::tag::APP_DELIVERY);
        wire::put_node(out, self.sender);
        wire::put_app(out, self.package.app_id());
        wire::put_digest(out, &self.claimed_digest);
        wire::put_u32(out, self.macs.len() as u32);
        for (v, t) in &self.macs {
            wire::put_node(out, *v);
            wire::put_tag(out, t);
        }
        wire::put_bytes(out, self.package.payload());
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyRequest {
    pub requester: NodeId,
    pub sender: NodeId,
    pub verifier: NodeId,
    pub app_id: AppId,
    pub digest: Digest,
    #[serde(skip)]
    pub tag: MacTag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyReply {
    pub verifier: NodeId,
    pub verdict: bool,
}

impl WireEncode for VerifyRequest {
    fn encode_into(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, wire::tag::VERIFY_REQUEST);
        wire::put_node(out, self.requester);
        wire::put_node(out, self.sender);
        wire::put_node(out, self.verifier);
        wire::put_app(out, &self.app_id);
        wire::put_digest(out, &self.digest);
        wire::put_tag(out, &self.tag);
    }
}

impl WireEncode for VerifyReply {
    fn encode_into(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, wire::tag::VERIFY_REPLY);
        wire::put_node(out, self.verifier);
        wire::put_u8(out, self.verdict as u8);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionReason {
    FingerprintMismatch,
    InsufficientVerdicts,
    QuorumReached,
    NoVerifiers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AcceptanceDecision {
    pub accepted: bool,
    pub reason: DecisionReason,
    pub positive_verdicts: usize,
    pub total_polled: usize,
}

/// Canonical MAC input binding an app to a payload digest.
pub fn mac_message(app_id: &AppId, digest: &Digest) -> Vec<u8> {
    let mut out = vec![wire::tag::MAC_INPUT];
    wire::put_app(&mut out, app_id);
    wire::put_digest(&mut out, digest);
    out
}

/// MACs `package` for up to `fanout` neighbors of `sender`, sampled with
/// `rng`. Neighbors in `exclude` and neighbors whose shared key is below the
/// scheme's minimum are never picked.
pub fn build_auth_package<R: Rng + ?Sized>(
    sender: NodeId,
    package: AppPackage,
    graph: &CommunityGraph,
    scheme: &MacScheme,
    fanout: usize,
    exclude: &[NodeId],
    rng: &mut R,
) -> Result<AuthPackage, AuthError> {
    let eligible: Vec<NodeId> = graph
        .neighbors(sender)
        .filter(|n| !exclude.contains(n))
        .filter(|n| graph.shared_key(sender, *n).is_some_and(|k| k.length_bits() >= scheme.min_key_bits))
        .collect();
    if eligible.is_empty() || fanout == 0 {
        return Err(AuthError::NoVerifiers(sender));
    }
    let mut chosen: Vec<NodeId> = eligible.choose_multiple(rng, fanout.min(eligible.len())).copied().collect();
    chosen.sort();
    let claimed_digest = package.fingerprint(scheme.width);
    let message = mac_message(package.app_id(), &claimed_digest);
    let macs = chosen
        .into_iter()
        .map(|v| {
            let key = graph.shared_key(sender, v).expect("filtered on key presence");
            Ok((v, scheme.mac(key, &message)?))
        })
        .collect::<Result<Vec<_>, CryptoError>>()?;
    Ok(AuthPackage { sender, package, claimed_digest, macs })
}

/// Binds the download to the discovery: the payload must hash to the claimed
/// digest and the claim must be the digest the vote selected.
pub fn toc_tou_check(auth: &AuthPackage, expected: &Digest, width: DigestWidth) -> bool {
    auth.package.fingerprint(width) == auth.claimed_digest && auth.claimed_digest == *expected
}

pub fn verification_requests(requester: NodeId, auth: &AuthPackage, width: DigestWidth) -> Vec<VerifyRequest> {
    let digest = auth.package.fingerprint(width);
    auth.macs
        .iter()
        .map(|(v, tag)| VerifyRequest {
            requester,
            sender: auth.sender,
            verifier: *v,
            app_id: auth.package.app_id().clone(),
            digest: digest.clone(),
            tag: tag.clone(),
        })
        .collect()
}

/// The verifier's answer before its strategy is applied. `None` when the
/// verifier is gone or no longer adjacent to the sender.
pub fn honest_verdict(req: &VerifyRequest, graph: &CommunityGraph, scheme: &MacScheme) -> Option<VerifyReply> {
    if !graph.are_linked(req.verifier, req.sender) {
        return None;
    }
    let key = graph.shared_key(req.verifier, req.sender)?;
    let verdict = scheme.verify(key, &mac_message(&req.app_id, &req.digest), &req.tag).unwrap_or(false);
    Some(VerifyReply { verifier: req.verifier, verdict })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyExchange {
    pub requests: Vec<VerifyRequest>,
    pub replies: Vec<VerifyReply>,
}

/// One request per listed verifier; replies reflect each verifier's strategy.
pub fn verify_round(requester: NodeId, auth: &AuthPackage, graph: &CommunityGraph, scheme: &MacScheme) -> VerifyExchange {
    let requests = verification_requests(requester, auth, scheme.width);
    let ctx = InterceptContext::default();
    let replies = requests
        .iter()
        .filter_map(|req| {
            let reply = honest_verdict(req, graph, scheme)?;
            match intercept(graph.behavior(req.verifier), Outbound::VerifyReply(reply), &ctx)? {
                Outbound::VerifyReply(r) => Some(r),
                _ => None,
            }
        })
        .collect();
    VerifyExchange { requests, replies }
}

/// Missing replies count against acceptance.
pub fn decide(replies: &[VerifyReply], total_polled: usize, quorum: Quorum) -> Result<AcceptanceDecision, AuthError> {
    if total_polled == 0 {
        return Err(AuthError::NoVerifiers(NodeId(u32::MAX)));
    }
    let positive = replies.iter().filter(|r| r.verdict).count();
    let accepted = quorum.accepts(positive, total_polled);
    Ok(AcceptanceDecision {
        accepted,
        reason: if accepted { DecisionReason::QuorumReached } else { DecisionReason::InsufficientVerdicts },
        positive_verdicts: positive,
        total_polled,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuthOutcome {
    pub decision: AcceptanceDecision,
    pub exchange: VerifyExchange,
}

/// TOCTTOU check, verification round, quorum decision.
pub fn authenticate(
    requester: NodeId,
    auth: &AuthPackage,
    expected: &Digest,
    graph: &CommunityGraph,
    scheme: &MacScheme,
    quorum: Quorum,
) -> AuthOutcome {
    if !toc_tou_check(auth, expected, scheme.width) {
        return AuthOutcome {
            decision: AcceptanceDecision {
                accepted: false,
                reason: DecisionReason::FingerprintMismatch,
                positive_verdicts: 0,
                total_polled: 0,
            },
            exchange: VerifyExchange::default(),
        };
    }
    let exchange = verify_round(requester, auth, graph, scheme);
    let decision = decide(&exchange.replies, exchange.requests.len(), quorum).unwrap_or(AcceptanceDecision {
        accepted: false,
        reason: DecisionReason::NoVerifiers,
        positive_verdicts: 0,
        total_polled: 0,
    });
    AuthOutcome { decision, exchange }
}

/// `Pr[X > quorum * k]` for `X ~ Bin(k, p)`: the chance that enough
/// independently compromised verifiers vouch for a forged delivery.
pub fn forgery_acceptance_bound(k: usize, p: f64, quorum: Quorum) -> f64 {
    let mut total = 0.0;
    let mut coeff = 1.0f64;
    for j in 0..=k {
        if j > 0 {
            coeff *= (k - j + 1) as f64 / j as f64;
        }
        if quorum.accepts(j, k) {
            total += coeff * p.powi(j as i32) * (1.0 - p).powi((k - j) as i32);
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgeryStudy {
    pub verifiers: usize,
    pub compromise_p: f64,
    pub quorum: Quorum,
    pub trials: u64,
    pub accepted: u64,
    pub rate: f64,
    pub analytic: f64,
    pub std_error: f64,
}

impl ForgeryStudy {
    /// Distance between empirical and analytic rate, in standard errors.
    pub fn z_score(&self) -> f64 {
        if self.std_error == 0.0 {
            if self.rate == self.analytic {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.rate - self.analytic).abs() / self.std_error
        }
    }
}

/// Monte Carlo of a substituted delivery. A sender vouched for by `k`
/// neighbors MACs the clean app; in transit the payload is swapped for a
/// tampered one whose claimed digest is recomputed (so the TOCTTOU check
/// against that digest passes) while the original tags stay attached. Each
/// trial marks every verifier independently as a lying verifier with
/// probability `p`, runs the real verification round and quorum decision,
/// and counts acceptances.
pub fn forgery_study(
    k: usize,
    p: f64,
    quorum: Quorum,
    trials: u64,
    seed: u64,
    scheme: &MacScheme,
) -> Result<ForgeryStudy, AuthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sender = NodeId(0);
    let requester = NodeId(k as u32 + 1);
    let mut graph = CommunityGraph::new();
    let kind = NodeType::new("device");
    let key_bits = scheme.min_key_bits.max(128).next_multiple_of(8);
    for i in 0..=k as u32 + 1 {
        let max_degree = (k as u32).max(1);
        graph
            .add_node(NodeProfile::new(NodeId(i), kind.clone(), key_bits, max_degree))
            .expect("fresh ids");
    }
    for v in 1..=k as u32 {
        graph.connect(sender, NodeId(v), &mut rng).expect("star topology");
    }
    let mut catalog = AppCatalog::new();
    let mut payload = vec![0u8; 1024];
    rng.fill_bytes(&mut payload);
    let clean = catalog.publish_clean(AppId::new("study", "1"), payload).expect("fresh catalog");
    let genuine = build_auth_package(sender, clean.clone(), &graph, scheme, k, &[requester], &mut rng)?;
    let forged_pkg = tamper(&clean, requester, &mut rng);
    let forged = AuthPackage {
        claimed_digest: forged_pkg.fingerprint(scheme.width),
        package: forged_pkg,
        ..genuine
    };
    let expected = forged.claimed_digest.clone();

    let mut accepted = 0u64;
    for _ in 0..trials {
        for v in 1..=k as u32 {
            let b = if rng.random_bool(p) { Behavior::LyingVerifier } else { Behavior::Honest };
            graph.profile_mut(NodeId(v)).expect("verifier").behavior = b;
        }
        if authenticate(requester, &forged, &expected, &graph, scheme, quorum).decision.accepted {
            accepted += 1;
        }
    }
    let analytic = forgery_acceptance_bound(k, p, quorum);
    let rate = if trials == 0 { 0.0 } else { accepted as f64 / trials as f64 };
    let std_error = if trials == 0 { 0.0 } else { (analytic * (1.0 - analytic) / trials as f64).sqrt() };
    Ok(ForgeryStudy { verifiers: k, compromise_p: p, quorum, trials, accepted, rate, analytic, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::MacKey;
    use proptest::prelude::*;
    use rand::SeedableRng;

    const W: DigestWidth = DigestWidth::Bits224;

    /// Sender 0 with `k` neighbors 1..=k; requester k+1 not adjacent.
    fn star(k: u32) -> (CommunityGraph, AppPackage, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = CommunityGraph::new();
        for i in 0..=k + 1 {
            g.add_node(NodeProfile::new(NodeId(i), NodeType::new("tv"), 128, 16)).unwrap();
        }
        for v in 1..=k {
            g.connect(NodeId(0), NodeId(v), &mut rng).unwrap();
        }
        let mut cat = AppCatalog::new();
        let pkg = cat.publish_clean(AppId::new("fw", "3"), vec![3u8; 512]).unwrap();
        (g, pkg, rng)
    }

    fn reply(v: u32, verdict: bool) -> VerifyReply {
        VerifyReply { verifier: NodeId(v), verdict }
    }

    #[test]
    fn fanout_is_capped_by_degree() {
        let (g, pkg, mut rng) = star(3);
        let auth = build_auth_package(NodeId(0), pkg, &g, &MacScheme::default(), 10, &[NodeId(4)], &mut rng).unwrap();
        assert_eq!(auth.macs.iter().map(|m| m.0).collect::<Vec<_>>(), vec![NodeId(1), NodeId(2), NodeId(3)]);
    }

    #[test]
    fn ten_macs_cost_2240_bits() {
        let (g, pkg, mut rng) = star(10);
        let auth = build_auth_package(NodeId(0), pkg, &g, &MacScheme::default(), 10, &[], &mut rng).unwrap();
        assert_eq!(auth.mac_block_bits(), 2240);
    }

    #[test]
    fn isolated_sender_cannot_authenticate() {
        let (g, pkg, mut rng) = star(2);
        let err = build_auth_package(NodeId(3), pkg, &g, &MacScheme::default(), 10, &[], &mut rng).unwrap_err();
        assert_eq!(err, AuthError::NoVerifiers(NodeId(3)));
    }

    #[test]
    fn weak_neighbor_keys_are_skipped() {
        let (mut g, pkg, mut rng) = star(2);
        g.add_node(NodeProfile::new(NodeId(9), NodeType::new("old"), 64, 4)).unwrap();
        g.connect(NodeId(0), NodeId(9), &mut rng).unwrap();
        let auth = build_auth_package(NodeId(0), pkg, &g, &MacScheme::default(), 10, &[], &mut rng).unwrap();
        assert!(auth.macs.iter().all(|(v, _)| *v != NodeId(9)));
    }

    #[test]
    fn toc_tou_binds_payload_claim_and_vote() {
        let (g, pkg, mut rng) = star(3);
        let auth = build_auth_package(NodeId(0), pkg.clone(), &g, &MacScheme::default(), 10, &[], &mut rng).unwrap();
        let h = pkg.fingerprint(W);
        assert!(toc_tou_check(&auth, &h, W));

        let swapped = AuthPackage { package: tamper(&pkg, NodeId(0), &mut rng), ..auth.clone() };
        assert!(!toc_tou_check(&swapped, &h, W));

        // Honest delivery of a package the vote picked: passes even if that
        // package is bad, since cleanliness is the vote's job.
        let bad = tamper(&pkg, NodeId(7), &mut rng);
        let honest_bad = build_auth_package(NodeId(0), bad.clone(), &g, &MacScheme::default(), 10, &[], &mut rng).unwrap();
        assert!(toc_tou_check(&honest_bad, &bad.fingerprint(W), W));
    }

    #[test]
    fn honest_round_all_true() {
        let (g, pkg, mut rng) = star(4);
        let scheme = MacScheme::default();
        let auth = build_auth_package(NodeId(0), pkg.clone(), &g, &scheme, 10, &[], &mut rng).unwrap();
        let out = authenticate(NodeId(5), &auth, &pkg.fingerprint(W), &g, &scheme, Quorum::default());
        assert!(out.exchange.replies.iter().all(|r| r.verdict));
        assert_eq!(out.exchange.replies.len(), 4);
        assert!(out.decision.accepted);
        assert_eq!(out.decision.reason, DecisionReason::QuorumReached);
    }

    #[test]
    fn corrupted_keystore_yields_one_false() {
        let (mut g, pkg, mut rng) = star(3);
        let scheme = MacScheme::default();
        let auth = build_auth_package(NodeId(0), pkg, &g, &scheme, 10, &[], &mut rng).unwrap();
        let good = g.shared_key(NodeId(2), NodeId(0)).unwrap().clone();
        let corrupt = MacKey::from_parts(good.key_id(), vec![0xEE; 16]).unwrap();
        g.keystore_mut(NodeId(2)).unwrap().replace(NodeId(0), corrupt);
        let ex = verify_round(NodeId(4), &auth, &g, &scheme);
        assert_eq!(ex.replies, vec![reply(1, true), reply(2, false), reply(3, true)]);
    }

    #[test]
    fn departed_verifier_gives_no_reply_and_liar_inverts() {
        let (mut g, pkg, mut rng) = star(3);
        let scheme = MacScheme::default();
        let auth = build_auth_package(NodeId(0), pkg, &g, &scheme, 10, &[], &mut rng).unwrap();
        g.disconnect(NodeId(0), NodeId(1));
        g.profile_mut(NodeId(3)).unwrap().behavior = Behavior::LyingVerifier;
        let ex = verify_round(NodeId(4), &auth, &g, &scheme);
        assert_eq!(ex.requests.len(), 3);
        assert_eq!(ex.replies, vec![reply(2, true), reply(3, false)]);
    }

    #[test]
    fn ten_verifications_cost_4480_digest_and_tag_bits() {
        let (g, pkg, mut rng) = star(10);
        let scheme = MacScheme::default();
        let auth = build_auth_package(NodeId(0), pkg, &g, &scheme, 10, &[], &mut rng).unwrap();
        let reqs = verification_requests(NodeId(11), &auth, W);
        let bits: u64 = reqs.iter().map(|r| (r.digest.width_bits() + r.tag.width_bits()) as u64).sum();
        assert_eq!(bits, 10 * 2 * 224);
    }

    #[test]
    fn decision_thresholds() {
        let q = Quorum::default();
        let d = decide(&[reply(1, true), reply(2, true), reply(3, true)], 3, q).unwrap();
        assert!(d.accepted);
        let d = decide(&[reply(1, true), reply(2, true), reply(3, false)], 5, q).unwrap();
        assert_eq!((d.accepted, d.reason), (false, DecisionReason::InsufficientVerdicts));
        let d = decide(&[reply(1, true), reply(2, true), reply(3, false), reply(4, false)], 4, q).unwrap();
        assert!(!d.accepted);
        assert!(matches!(decide(&[], 0, q), Err(AuthError::NoVerifiers(_))));
    }

    #[test]
    fn quorum_parsing() {
        assert_eq!("1/2".parse::<Quorum>().unwrap(), Quorum::default());
        assert_eq!("0.5".parse::<Quorum>().unwrap(), Quorum::default());
        assert_eq!("0.7".parse::<Quorum>().unwrap().ratio(), Ratio::new(7, 10));
        assert!("1".parse::<Quorum>().is_err());
        assert!("1/0".parse::<Quorum>().is_err());
        assert!("-0.2".parse::<Quorum>().is_err());
        assert!("abc".parse::<Quorum>().is_err());
        let q: Quorum = serde_json::from_str("0.7").unwrap();
        assert!(q.accepts(8, 10) && !q.accepts(7, 10));
    }

    #[test]
    fn small_forgery_study_tracks_bound() {
        let s = forgery_study(5, 0.3, Quorum::default(), 4000, 1, &MacScheme::default()).unwrap();
        assert!(s.z_score() < 4.0, "{s:?}");
        let none = forgery_study(5, 0.0, Quorum::default(), 200, 1, &MacScheme::default()).unwrap();
        assert_eq!(none.accepted, 0);
    }

    proptest! {
        #[test]
        fn substitution_after_mac_is_always_caught(seed in any::<u64>(), k in 1u32..6) {
            let (g, pkg, _) = star(k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scheme = MacScheme::default();
            let auth = build_auth_package(NodeId(0), pkg.clone(), &g, &scheme, 10, &[], &mut rng).unwrap();
            let bad = tamper(&pkg, NodeId(0), &mut rng);
            // even with the claim rewritten to match, honest verifiers refuse
            let sub = AuthPackage { claimed_digest: bad.fingerprint(W), package: bad, ..auth };
            let ex = verify_round(NodeId(k + 1), &sub, &g, &scheme);
            prop_assert_eq!(ex.replies.len(), k as usize);
            prop_assert!(ex.replies.iter().all(|r| !r.verdict));
        }
    }
}
