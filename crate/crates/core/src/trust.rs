//! Per-node trust ledgers.
//!
//! Each node keeps, for every peer it has dealt with, an estimate of how
//! likely that peer is to answer a request (`resp_prob`) and how likely its
//! answer is to be correct given that it answered (`cond_trust`). Both are
//! exponentially smoothed. The subjective trust placed in a retrieval is the
//! total-probability mix of the responders' `cond_trust`, weighted by their
//! `resp_prob` normalized over the polled set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;

pub const STRANGER_PRIOR: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustError {
    #[error("subjective trust needs at least one responder")]
    NoResponders,
    #[error("node {0} keeps no record about itself")]
    SelfRecord(NodeId),
    #[error("node {0} has no unscored response to grade")]
    NotResponded(NodeId),
    #[error("smoothing factor {0} outside (0, 1]")]
    InvalidAlpha(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustRecord {
    pub resp_prob: f64,
    pub cond_trust: f64,
    pub observations: u64,
    #[serde(skip)]
    pending_score: bool,
}

impl Default for TrustRecord {
    fn default() -> Self {
        TrustRecord { resp_prob: STRANGER_PRIOR, cond_trust: STRANGER_PRIOR, observations: 0, pending_score: false }
    }
}

impl TrustRecord {
    pub fn new(resp_prob: f64, cond_trust: f64) -> Self {
        TrustRecord {
            resp_prob: resp_prob.clamp(0.0, 1.0),
            cond_trust: cond_trust.clamp(0.0, 1.0),
            ..Default::default()
        }
    }

    /// Per-peer scalar used for linking decisions: the geometric mean of the
    /// two estimates. It falls toward zero when either one does and sits at
    /// the stranger prior for an unknown peer.
    pub fn combined(&self) -> f64 {
        (self.resp_prob * self.cond_trust).sqrt()
    }
}

fn smooth(current: f64, alpha: f64, hit: bool) -> f64 {
    let target = if hit { 1.0 } else { 0.0 };
    ((1.0 - alpha) * current + alpha * target).clamp(0.0, 1.0)
}

/// Convex mix of `(resp_prob, cond_trust)` pairs with normalized response
/// weights; uniform weights when every `resp_prob` is zero.
pub fn weighted_trust(records: &[TrustRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let total: f64 = records.iter().map(|r| r.resp_prob).sum();
    let raw = if total > 0.0 {
        records.iter().map(|r| r.cond_trust * r.resp_prob).sum::<f64>() / total
    } else {
        records.iter().map(|r| r.cond_trust).sum::<f64>() / records.len() as f64
    };
    let lo = records.iter().map(|r| r.cond_trust).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.cond_trust).fold(f64::NEG_INFINITY, f64::max);
    Some(raw.clamp(lo, hi))
}

#[derive(Clone, Debug, Serialize)]
pub struct Ledger {
    owner: NodeId,
    records: BTreeMap<NodeId, TrustRecord>,
    alpha: f64,
}

impl Ledger {
    pub fn new(owner: NodeId, alpha: f64) -> Result<Self, TrustError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(TrustError::InvalidAlpha(alpha));
        }
        Ok(Ledger { owner, records: BTreeMap::new(), alpha })
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The record about `peer`, or the stranger prior.
    pub fn record(&self, peer: NodeId) -> TrustRecord {
        self.records.get(&peer).copied().unwrap_or_default()
    }

    pub fn known(&self, peer: NodeId) -> Option<&TrustRecord> {
        self.records.get(&peer)
    }

    pub fn records(&self) -> impl Iterator<Item = (NodeId, &TrustRecord)> {
        self.records.iter().map(|(p, r)| (*p, r))
    }

    pub fn combined(&self, peer: NodeId) -> f64 {
        self.record(peer).combined()
    }

    /// Overwrites the record for `peer`.
    pub fn set(&mut self, peer: NodeId, record: TrustRecord) -> Result<(), TrustError> {
        self.entry(peer)?;
        self.records.insert(peer, record);
        Ok(())
    }

    pub fn forget(&mut self, peer: NodeId) {
        self.records.remove(&peer);
    }

    fn entry(&mut self, peer: NodeId) -> Result<&mut TrustRecord, TrustError> {
        if peer == self.owner {
            return Err(TrustError::SelfRecord(peer));
        }
        Ok(self.records.entry(peer).or_default())
    }

    pub fn subjective_trust(&self, responders: &[NodeId]) -> Result<f64, TrustError> {
        if let Some(me) = responders.iter().find(|p| **p == self.owner) {
            return Err(TrustError::SelfRecord(*me));
        }
        let records: Vec<TrustRecord> = responders.iter().map(|p| self.record(*p)).collect();
        weighted_trust(&records).ok_or(TrustError::NoResponders)
    }

    pub fn update_response(&mut self, peer: NodeId, responded: bool) -> Result<(), TrustError> {
        let alpha = self.alpha;
        let rec = self.entry(peer)?;
        rec.resp_prob = smooth(rec.resp_prob, alpha, responded);
        rec.observations += 1;
        rec.pending_score = responded;
        Ok(())
    }

    /// Grades the peer's most recent response. Each response is graded once.
    pub fn update_correctness(&mut self, peer: NodeId, agreed_with_majority: bool) -> Result<(), TrustError> {
        if peer == self.owner {
            return Err(TrustError::SelfRecord(peer));
        }
        let alpha = self.alpha;
        match self.records.get_mut(&peer) {
            Some(rec) if rec.pending_score => {
                rec.cond_trust = smooth(rec.cond_trust, alpha, agreed_with_majority);
                rec.pending_score = false;
                Ok(())
            }
            _ => Err(TrustError::NotResponded(peer)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger_with(recs: &[(f64, f64)]) -> (Ledger, Vec<NodeId>) {
        let mut l = Ledger::new(NodeId(0), DEFAULT_ALPHA).unwrap();
        let ids: Vec<NodeId> = (1..=recs.len() as u32).map(NodeId).collect();
        for (id, (r, c)) in ids.iter().zip(recs) {
            l.set(*id, TrustRecord::new(*r, *c)).unwrap();
        }
        (l, ids)
    }

    #[test]
    fn single_and_equal_weight_cases() {
        let (l, ids) = ledger_with(&[(1.0, 1.0)]);
        assert_eq!(l.subjective_trust(&ids).unwrap(), 1.0);
        let (l, ids) = ledger_with(&[(0.4, 1.0), (0.4, 0.5)]);
        assert!((l.subjective_trust(&ids).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn three_responders_match_exact_sum() {
        // (0.8*0.9 + 0.2*0.3 + 0.5*0.6) / 1.8 = 1.08 / 1.8 = 0.6 exactly.
        let (l, ids) = ledger_with(&[(0.9, 0.8), (0.3, 0.2), (0.6, 0.5)]);
        assert!((l.subjective_trust(&ids).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_response_weights_fall_back_to_uniform() {
        let (l, ids) = ledger_with(&[(0.0, 0.2), (0.0, 0.6)]);
        assert!((l.subjective_trust(&ids).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn strangers_use_prior_and_errors() {
        let l = Ledger::new(NodeId(0), 0.1).unwrap();
        assert_eq!(l.subjective_trust(&[NodeId(5)]).unwrap(), STRANGER_PRIOR);
        assert_eq!(l.combined(NodeId(5)), STRANGER_PRIOR);
        assert_eq!(l.subjective_trust(&[]), Err(TrustError::NoResponders));
        assert_eq!(l.subjective_trust(&[NodeId(0)]), Err(TrustError::SelfRecord(NodeId(0))));
        assert_eq!(Ledger::new(NodeId(0), 0.0).unwrap_err(), TrustError::InvalidAlpha(0.0));
    }

    #[test]
    fn response_updates() {
        let mut l = Ledger::new(NodeId(0), 0.1).unwrap();
        l.update_response(NodeId(1), true).unwrap();
        assert!((l.record(NodeId(1)).resp_prob - 0.55).abs() < 1e-15);
        l.set(NodeId(2), TrustRecord::new(0.0, 0.5)).unwrap();
        l.update_response(NodeId(2), false).unwrap();
        assert_eq!(l.record(NodeId(2)).resp_prob, 0.0);
        assert_eq!(l.update_response(NodeId(0), true), Err(TrustError::SelfRecord(NodeId(0))));
    }

    #[test]
    fn response_stream_converges_to_one() {
        let mut l = Ledger::new(NodeId(0), 0.1).unwrap();
        let mut prev = l.record(NodeId(1)).resp_prob;
        for n in 1..=100 {
            l.update_response(NodeId(1), true).unwrap();
            let now = l.record(NodeId(1)).resp_prob;
            assert!(now > prev);
            assert!((now - (1.0 - 0.5 * 0.9f64.powi(n))).abs() < 1e-12);
            prev = now;
        }
        assert!(prev > 0.99);
    }

    #[test]
    fn correctness_updates() {
        let mut l = Ledger::new(NodeId(0), 0.1).unwrap();
        assert_eq!(l.update_correctness(NodeId(1), true), Err(TrustError::NotResponded(NodeId(1))));
        l.update_response(NodeId(1), true).unwrap();
        l.update_correctness(NodeId(1), true).unwrap();
        assert!((l.record(NodeId(1)).cond_trust - 0.55).abs() < 1e-15);
        // graded once per response
        assert_eq!(l.update_correctness(NodeId(1), true), Err(TrustError::NotResponded(NodeId(1))));

        l.set(NodeId(2), TrustRecord::new(1.0, 1.0)).unwrap();
        l.update_response(NodeId(2), true).unwrap();
        l.update_correctness(NodeId(2), false).unwrap();
        assert!((l.record(NodeId(2)).cond_trust - 0.9).abs() < 1e-15);

        l.update_response(NodeId(3), false).unwrap();
        assert_eq!(l.update_correctness(NodeId(3), true), Err(TrustError::NotResponded(NodeId(3))));
    }

    #[test]
    fn alternating_grades_settle_on_a_band_around_half() {
        // Two-cycle of c' = 0.9c + 0.1·x alternating x = 1, 0:
        // high = 0.1 / (1 - 0.81), low = 0.9 * high.
        let high = 0.1 / 0.19;
        let low = 0.9 * high;
        let mut l = Ledger::new(NodeId(0), 0.1).unwrap();
        let mut prev_gap = f64::INFINITY;
        for step in 0..200 {
            let agree = step % 2 == 0;
            l.update_response(NodeId(1), true).unwrap();
            l.update_correctness(NodeId(1), agree).unwrap();
            let c = l.record(NodeId(1)).cond_trust;
            assert!((0.0..=1.0).contains(&c));
            let gap = if agree { (c - high).abs() } else { (c - low).abs() };
            assert!(gap <= prev_gap + 1e-15);
            prev_gap = gap;
        }
        let c = l.record(NodeId(1)).cond_trust;
        assert!((c - low).abs() < 1e-9);
        assert!(low < 0.5 && high > 0.5 && high - low < 0.06);
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0f64..=1.0
    }

    proptest! {
        #[test]
        fn trust_stays_within_cond_range(recs in proptest::collection::vec((unit(), unit()), 1..8)) {
            let (l, ids) = ledger_with(&recs);
            let t = l.subjective_trust(&ids).unwrap();
            let lo = recs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            let hi = recs.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(t >= lo && t <= hi);
        }

        #[test]
        fn trust_invariant_under_response_scaling(recs in proptest::collection::vec((0.01f64..=1.0, unit()), 1..8), scale in 0.01f64..1.0) {
            let (a, ids) = ledger_with(&recs);
            let scaled: Vec<(f64, f64)> = recs.iter().map(|(r, c)| (r * scale, *c)).collect();
            let (b, _) = ledger_with(&scaled);
            let ta = a.subjective_trust(&ids).unwrap();
            let tb = b.subjective_trust(&ids).unwrap();
            prop_assert!((ta - tb).abs() < 1e-12);
        }

        #[test]
        fn updates_stay_bounded(ops in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..300), alpha in 0.001f64..=1.0) {
            let mut l = Ledger::new(NodeId(0), alpha).unwrap();
            for (responded, agreed) in ops {
                l.update_response(NodeId(1), responded).unwrap();
                if responded {
                    l.update_correctness(NodeId(1), agreed).unwrap();
                }
                let r = l.record(NodeId(1));
                prop_assert!((0.0..=1.0).contains(&r.resp_prob));
                prop_assert!((0.0..=1.0).contains(&r.cond_trust));
            }
        }
    }
}
