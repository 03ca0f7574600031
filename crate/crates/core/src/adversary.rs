//! Node behavior strategies and compromise plans.
//!
//! Strategies are static for a run. Each one is a pure rewrite of the
//! messages a node sends; a store blocker is not a node strategy but the
//! scenario-level `store_blocked` flag.

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::AppPackage;
use crate::auth::{AuthPackage, VerifyReply};
use crate::credibility::FingerprintReply;
use crate::crypto::Digest;
use crate::NodeId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Behavior {
    #[default]
    Honest,
    /// Holds and serves tampered packages consistently in every step.
    TamperedServer,
    /// Advertises the clean digest, then delivers a tampered payload.
    TocTouSwapper,
    /// Inverts every MAC verdict it returns.
    LyingVerifier,
    /// Never answers call-outs or verification requests.
    FreeRider,
}

impl Behavior {
    pub const ALL: [Behavior; 5] = [
        Behavior::Honest,
        Behavior::TamperedServer,
        Behavior::TocTouSwapper,
        Behavior::LyingVerifier,
        Behavior::FreeRider,
    ];

    /// Whether packages this node installs are replaced by the tampered variant.
    pub fn holds_tampered(self) -> bool {
        matches!(self, Behavior::TamperedServer)
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("compromise fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("strategy weight for {0} is negative or not finite")]
    InvalidWeight(Behavior),
    #[error("strategy weights sum to {0}, expected 1")]
    WeightSum(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompromisePlan {
    #[serde(default)]
    pub fraction: f64,
    #[serde(default)]
    pub mix: BTreeMap<Behavior, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CompromisePlan {
    fn default() -> Self {
        CompromisePlan { fraction: 0.0, mix: BTreeMap::new(), seed: 0 }
    }
}

impl CompromisePlan {
    pub fn new(fraction: f64, mix: impl IntoIterator<Item = (Behavior, f64)>, seed: u64) -> Self {
        CompromisePlan { fraction, mix: mix.into_iter().collect(), seed }
    }

    pub fn validate(&self) -> Result<(), AdversaryError> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(AdversaryError::InvalidFraction(self.fraction));
        }
        for (b, w) in &self.mix {
            if !w.is_finite() || *w < 0.0 {
                return Err(AdversaryError::InvalidWeight(*b));
            }
        }
        let sum: f64 = self.mix.values().sum();
        let needs_mix = self.fraction > 0.0;
        if (needs_mix || !self.mix.is_empty()) && (sum - 1.0).abs() > 1e-9 {
            return Err(AdversaryError::WeightSum(sum));
        }
        Ok(())
    }

    /// Number of nodes out of `n` that get a non-default strategy.
    pub fn compromised_count(&self, n: usize) -> usize {
        // the epsilon keeps 0.3 * 10 at 3 despite binary rounding
        ((self.fraction * n as f64) + 1e-9).floor() as usize
    }

    /// Strategy for a node joining mid-run: compromised with probability
    /// `fraction`, strategy drawn from the mix.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Behavior {
        if self.mix.is_empty() || !rng.random_bool(self.fraction.clamp(0.0, 1.0)) {
            return Behavior::Honest;
        }
        let (kinds, weights): (Vec<Behavior>, Vec<f64>) = self.mix.iter().map(|(b, w)| (*b, *w)).unzip();
        match WeightedIndex::new(&weights) {
            Ok(dist) => kinds[dist.sample(rng)],
            Err(_) => Behavior::Honest,
        }
    }

    /// Largest-remainder split of `count` compromised slots over the mix.
    fn apportion(&self, count: usize) -> Vec<(Behavior, usize)> {
        let mut parts: Vec<(Behavior, usize, f64)> = self
            .mix
            .iter()
            .map(|(b, w)| {
                let exact = w * count as f64;
                (*b, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = parts.iter().map(|p| p.1).sum();
        let mut order: Vec<usize> = (0..parts.len()).collect();
        order.sort_by(|a, b| parts[*b].2.total_cmp(&parts[*a].2).then(a.cmp(b)));
        for i in order.into_iter().cycle().take(count.saturating_sub(assigned)) {
            parts[i].1 += 1;
        }
        parts.into_iter().map(|(b, n, _)| (b, n)).collect()
    }
}

/// Seeded assignment of strategies: `⌊fraction·N⌋` sampled nodes get a
/// strategy from the mix, everyone else is honest.
pub fn assign_behaviors(
    nodes: impl IntoIterator<Item = NodeId>,
    plan: &CompromisePlan,
) -> Result<BTreeMap<NodeId, Behavior>, AdversaryError> {
    plan.validate()?;
    let mut ids: Vec<NodeId> = nodes.into_iter().collect();
    ids.sort();
    ids.dedup();
    let mut out: BTreeMap<NodeId, Behavior> = ids.iter().map(|n| (*n, Behavior::Honest)).collect();
    let count = plan.compromised_count(ids.len());
    if count == 0 || plan.mix.is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    ids.shuffle(&mut rng);
    let mut chosen = ids.into_iter().take(count);
    for (behavior, n) in plan.apportion(count) {
        for id in chosen.by_ref().take(n) {
            out.insert(id, behavior);
        }
    }
    Ok(out)
}

/// Outbound protocol messages a strategy may rewrite.
#[derive(Clone, Debug, PartialEq)]
pub enum Outbound {
    FingerprintReply(FingerprintReply),
    AppDelivery(AuthPackage),
    VerifyReply(VerifyReply),
}

/// What a misbehaving node knows beyond its own state.
#[derive(Clone, Copy, Debug, Default)]
pub struct InterceptContext<'a> {
    /// The store's digest for the app in question.
    pub clean_digest: Option<&'a Digest>,
    /// The tampered variant an adversary can substitute.
    pub tampered: Option<&'a AppPackage>,
}

/// Applies `behavior` to an outbound message; `None` means silence.
pub fn intercept(behavior: Behavior, msg: Outbound, ctx: &InterceptContext<'_>) -> Option<Outbound> {
    match (behavior, msg) {
        (Behavior::Honest | Behavior::TamperedServer, m) => Some(m),
        (Behavior::FreeRider, Outbound::FingerprintReply(_) | Outbound::VerifyReply(_)) => None,
        (Behavior::FreeRider, m) => Some(m),
        (Behavior::LyingVerifier, Outbound::VerifyReply(mut r)) => {
            r.verdict = !r.verdict;
            Some(Outbound::VerifyReply(r))
        }
        (Behavior::LyingVerifier, m) => Some(m),
        (Behavior::TocTouSwapper, Outbound::FingerprintReply(mut r)) => {
            if let Some(d) = ctx.clean_digest {
                r.digest = d.clone();
            }
            Some(Outbound::FingerprintReply(r))
        }
        (Behavior::TocTouSwapper, Outbound::AppDelivery(mut a)) => {
            if let Some(t) = ctx.tampered {
                a.package = t.clone();
            }
            Some(Outbound::AppDelivery(a))
        }
        (Behavior::TocTouSwapper, m) => Some(m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::{tamper, AppCatalog, AppId};
    use crate::crypto::DigestWidth;

    fn ids(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn zero_fraction_is_all_honest() {
        let plan = CompromisePlan::new(0.0, [(Behavior::FreeRider, 1.0)], 1);
        let m = assign_behaviors(ids(10), &plan).unwrap();
        assert!(m.values().all(|b| *b == Behavior::Honest));
    }

    #[test]
    fn full_fraction_single_strategy() {
        let plan = CompromisePlan::new(1.0, [(Behavior::FreeRider, 1.0)], 1);
        let m = assign_behaviors(ids(10), &plan).unwrap();
        assert!(m.values().all(|b| *b == Behavior::FreeRider));
    }

    #[test]
    fn exact_count_and_seeded() {
        let plan = CompromisePlan::new(0.3, [(Behavior::TamperedServer, 1.0)], 42);
        let a = assign_behaviors(ids(10), &plan).unwrap();
        let b = assign_behaviors(ids(10), &plan).unwrap();
        assert_eq!(a.values().filter(|b| **b != Behavior::Honest).count(), 3);
        assert_eq!(a, b);
        let other = CompromisePlan { seed: 43, ..plan };
        let c = assign_behaviors(ids(10), &other).unwrap();
        assert_eq!(c.values().filter(|b| **b != Behavior::Honest).count(), 3);
    }

    #[test]
    fn mix_is_apportioned_exactly() {
        let plan = CompromisePlan::new(0.5, [(Behavior::FreeRider, 0.5), (Behavior::LyingVerifier, 0.5)], 7);
        let m = assign_behaviors(ids(20), &plan).unwrap();
        assert_eq!(m.values().filter(|b| **b == Behavior::FreeRider).count(), 5);
        assert_eq!(m.values().filter(|b| **b == Behavior::LyingVerifier).count(), 5);
        let plan = CompromisePlan::new(0.7, [(Behavior::FreeRider, 2.0 / 3.0), (Behavior::LyingVerifier, 1.0 / 3.0)], 7);
        let m = assign_behaviors(ids(10), &plan).unwrap();
        assert_eq!(m.values().filter(|b| **b != Behavior::Honest).count(), 7);
    }

    #[test]
    fn invalid_plans() {
        assert_eq!(
            CompromisePlan::new(1.5, [(Behavior::FreeRider, 1.0)], 0).validate(),
            Err(AdversaryError::InvalidFraction(1.5))
        );
        assert!(matches!(
            CompromisePlan::new(0.2, [(Behavior::FreeRider, 0.5)], 0).validate(),
            Err(AdversaryError::WeightSum(_))
        ));
        assert!(matches!(CompromisePlan::new(0.2, [], 0).validate(), Err(AdversaryError::WeightSum(_))));
        assert_eq!(
            CompromisePlan::new(0.2, [(Behavior::FreeRider, -1.0), (Behavior::Honest, 2.0)], 0).validate(),
            Err(AdversaryError::InvalidWeight(Behavior::FreeRider))
        );
    }

    fn sample_reply() -> (FingerprintReply, Digest, AppPackage) {
        use rand::SeedableRng;
        let mut cat = AppCatalog::new();
        let clean = cat.publish_clean(AppId::new("a", "1"), vec![5u8; 32]).unwrap();
        let bad = tamper(&clean, NodeId(3), &mut ChaCha8Rng::seed_from_u64(0));
        let reply = FingerprintReply {
            responder: NodeId(3),
            app_id: clean.app_id().clone(),
            digest: bad.fingerprint(DigestWidth::Bits224),
            key_length_bits: 128,
        };
        (reply, clean.fingerprint(DigestWidth::Bits224), bad)
    }

    #[test]
    fn honest_is_identity() {
        let (reply, clean, bad) = sample_reply();
        let ctx = InterceptContext { clean_digest: Some(&clean), tampered: Some(&bad) };
        let verdict = VerifyReply { verifier: NodeId(1), verdict: true };
        for m in [Outbound::FingerprintReply(reply), Outbound::VerifyReply(verdict)] {
            assert_eq!(intercept(Behavior::Honest, m.clone(), &ctx), Some(m));
        }
    }

    #[test]
    fn strategies_rewrite_as_documented() {
        let (reply, clean, bad) = sample_reply();
        let ctx = InterceptContext { clean_digest: Some(&clean), tampered: Some(&bad) };
        let verdict = VerifyReply { verifier: NodeId(1), verdict: true };
        assert_eq!(intercept(Behavior::FreeRider, Outbound::FingerprintReply(reply.clone()), &ctx), None);
        assert_eq!(intercept(Behavior::FreeRider, Outbound::VerifyReply(verdict.clone()), &ctx), None);
        assert_eq!(
            intercept(Behavior::LyingVerifier, Outbound::VerifyReply(verdict), &ctx),
            Some(Outbound::VerifyReply(VerifyReply { verifier: NodeId(1), verdict: false }))
        );
        match intercept(Behavior::TocTouSwapper, Outbound::FingerprintReply(reply), &ctx) {
            Some(Outbound::FingerprintReply(r)) => assert_eq!(r.digest, clean),
            other => panic!("unexpected {other:?}"),
        }
    }
}
