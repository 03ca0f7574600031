//! Multi-peer credibility checking.
//!
//! A requester calls out for an app; holders answer with the fingerprint of
//! their installed copy. Replies from devices whose keys are too short are
//! dropped, the largest digest class wins, one of its members becomes the
//! download source, and the dissenters are told they may be carrying malware.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::adversary::{intercept, InterceptContext, Outbound};
use crate::artifact::{AppCatalog, AppId, InstallState};
use crate::community::CommunityGraph;
use crate::crypto::{Digest, DigestWidth};
use crate::wire::{self, WireEncode};
use crate::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VoteError {
    #[error("no replies to vote over")]
    NoSource,
    #[error("{classes} digest classes tie at {size} replies each")]
    NoMajority { classes: usize, size: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CallOut {
    pub requester: NodeId,
    pub app_id: AppId,
    pub round: u64,
}

/// Issues call-outs with strictly increasing per-requester round numbers.
#[derive(Clone, Debug, Default)]
pub struct RoundCounter {
    last: BTreeMap<NodeId, u64>,
}

impl RoundCounter {
    pub fn call_out(&mut self, requester: NodeId, app_id: AppId) -> CallOut {
        let round = self.last.entry(requester).and_modify(|r| *r += 1).or_insert(1);
        CallOut { requester, app_id, round: *round }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FingerprintReply {
    pub responder: NodeId,
    pub app_id: AppId,
    pub digest: Digest,
    pub key_length_bits: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VoteOutcome {
    pub majority_digest: Digest,
    /// Ascending by id.
    pub supporters: Vec<NodeId>,
    /// Ascending by id, each with the digest it reported.
    pub dissenters: Vec<(NodeId, Digest)>,
    pub unanimous: bool,
}

impl VoteOutcome {
    pub fn dissenter_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.dissenters.iter().map(|d| d.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SuspicionNotice {
    pub sender: NodeId,
    pub target: NodeId,
    pub app_id: AppId,
    pub suspected_digest: Digest,
    pub majority_digest: Digest,
}

/// Fingerprint replies from every reachable holder of the app, after each
/// responder's strategy has had its say. Holders lacking the app stay silent.
pub fn broadcast_call_out(
    call: &CallOut,
    graph: &CommunityGraph,
    installs: &InstallState,
    catalog: &AppCatalog,
    width: DigestWidth,
    hop_limit: Option<u32>,
) -> Vec<FingerprintReply> {
    if !graph.contains(call.requester) {
        return Vec::new();
    }
    let clean = catalog.clean_digest(&call.app_id, width);
    let ctx = InterceptContext { clean_digest: clean.as_ref(), tampered: None };
    graph
        .reachable_from(call.requester, hop_limit)
        .into_iter()
        .filter_map(|n| {
            let pkg = installs.get(n, &call.app_id)?;
            let profile = graph.profile(n)?;
            let reply = FingerprintReply {
                responder: n,
                app_id: call.app_id.clone(),
                digest: pkg.fingerprint(width),
                key_length_bits: profile.key_length_bits,
            };
            match intercept(profile.behavior, Outbound::FingerprintReply(reply), &ctx)? {
                Outbound::FingerprintReply(r) => Some(r),
                _ => None,
            }
        })
        .collect()
}

/// Splits replies into (kept, removed): a reply is kept iff its device key is
/// at least `min_key_bits` long.
pub fn filter_old_devices(replies: Vec<FingerprintReply>, min_key_bits: u32) -> (Vec<FingerprintReply>, Vec<FingerprintReply>) {
    replies.into_iter().partition(|r| r.key_length_bits >= min_key_bits)
}

pub fn majority_vote(replies: &[FingerprintReply]) -> Result<VoteOutcome, VoteError> {
    if replies.is_empty() {
        return Err(VoteError::NoSource);
    }
    let mut classes: BTreeMap<&Digest, Vec<NodeId>> = BTreeMap::new();
    for r in replies {
        classes.entry(&r.digest).or_default().push(r.responder);
    }
    let size = classes.values().map(Vec::len).max().expect("nonempty");
    let mut largest = classes.iter().filter(|(_, v)| v.len() == size);
    let (winner, _) = largest.next().expect("max exists");
    let ties = largest.count();
    if ties > 0 {
        return Err(VoteError::NoMajority { classes: ties + 1, size });
    }
    let winner: Digest = (*winner).clone();
    let mut supporters = classes[&winner].clone();
    supporters.sort();
    let mut dissenters: Vec<(NodeId, Digest)> = replies
        .iter()
        .filter(|r| r.digest != winner)
        .map(|r| (r.responder, r.digest.clone()))
        .collect();
    dissenters.sort();
    Ok(VoteOutcome { unanimous: classes.len() == 1, majority_digest: winner, supporters, dissenters })
}

/// Uniform pick among the supporters.
pub fn choose_source<R: Rng + ?Sized>(outcome: &VoteOutcome, rng: &mut R) -> NodeId {
    *outcome.supporters.choose(rng).expect("a vote outcome always has supporters")
}

pub fn notify_dissenters(outcome: &VoteOutcome, requester: NodeId, app_id: &AppId) -> Vec<SuspicionNotice> {
    outcome
        .dissenters
        .iter()
        .map(|(target, digest)| SuspicionNotice {
            sender: requester,
            target: *target,
            app_id: app_id.clone(),
            suspected_digest: digest.clone(),
            majority_digest: outcome.majority_digest.clone(),
        })
        .collect()
}

impl WireEncode for CallOut {
    fn encode_into(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, wire::tag::CALL_OUT);
        wire::put_node(out, self.requester);
        wire::put_app(out, &self.app_id);
        wire::put_u64(out, self.round);
    }
}

impl WireEncode for FingerprintReply {
    fn encode_into(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, wire::tag::FINGERPRINT_REPLY);
        wire::put_node(out, self.responder);
        wire::put_app(out, &self.app_id);
        wire::put_digest(out, &self.digest);
        wire::put_u32(out, self.key_length_bits);
    }
}

impl WireEncode for SuspicionNotice {
    fn encode_into(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, wire::tag::SUSPICION_NOTICE);
        wire::put_node(out, self.sender);
        wire::put_node(out, self.target);
        wire::put_app(out, &self.app_id);
        wire::put_digest(out, &self.suspected_digest);
        wire::put_digest(out, &self.majority_digest);
    }
}
