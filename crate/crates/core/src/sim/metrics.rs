//! Bandwidth accounting and the per-run metrics report.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::events::{Event, EventKind};
use super::scenario::Scenario;
use crate::artifact::AppId;
use crate::auth::{DecisionReason, ForgeryStudy};
use crate::NodeId;

/// Protocol overhead of one retrieval, in digest and tag bits only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRecord {
    /// Fingerprint replies to the call-out.
    pub callout_bits: u64,
    /// MACs attached to the delivery.
    pub mac_block_bits: u64,
    /// Digest and tag sent to each verifier.
    pub verification_bits: u64,
    pub total_bits: u64,
    /// Application payload, reported apart from the overhead.
    pub payload_bytes: u64,
}

impl OverheadRecord {
    pub fn new(callout_bits: u64, mac_block_bits: u64, verification_bits: u64, payload_bytes: u64) -> Self {
        OverheadRecord {
            callout_bits,
            mac_block_bits,
            verification_bits,
            total_bits: callout_bits + mac_block_bits + verification_bits,
            payload_bytes,
        }
    }

    /// Closed-form cost: `n` replies, `m` MACs and `m` verifications at
    /// `width` bits each.
    pub fn model(replies: u64, macs: u64, width_bits: u64) -> Self {
        OverheadRecord::new(replies * width_bits, macs * width_bits, 2 * macs * width_bits, 0)
    }
}

/// The closed-form cost of one retrieval, printable as a worked sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandwidthModel {
    pub peers: u64,
    pub verifiers: u64,
    pub width_bits: u64,
}

impl BandwidthModel {
    pub fn record(&self) -> OverheadRecord {
        OverheadRecord::model(self.peers, self.verifiers, self.width_bits)
    }
}

impl fmt::Display for BandwidthModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.record();
        let (n, m, w) = (self.peers, self.verifiers, self.width_bits);
        writeln!(f, "call-out replies  {n} x {w} bit = {} bit", r.callout_bits)?;
        writeln!(f, "MAC block         {m} x {w} bit = {} bit", r.mac_block_bits)?;
        writeln!(f, "verification  2 x {m} x {w} bit = {} bit", r.verification_bits)?;
        let cmp = if r.total_bits < 10_000 { "<" } else { ">=" };
        writeln!(f, "total                           {} bit ({cmp} 10000 bit)", r.total_bits)
    }
}

/// Prices a retrieval from its events: replies count against the call-out,
/// the delivery's MAC block against the MAC block, requests to verifiers
/// against verification. Other events carry no overhead.
pub fn account_overhead<'a>(trace: impl IntoIterator<Item = &'a Event>) -> OverheadRecord {
    let (mut callout, mut block, mut verification, mut payload) = (0, 0, 0, 0);
    for e in trace {
        match e.kind {
            EventKind::FingerprintReply => callout += e.overhead_bits,
            EventKind::AppDelivery => {
                block += e.overhead_bits;
                payload += e.payload_bytes;
            }
            EventKind::VerifyRequest => verification += e.overhead_bits,
            _ => {}
        }
    }
    OverheadRecord::new(callout, block, verification, payload)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteKind {
    Unanimous,
    Split,
    Tie,
    NoSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalOutcome {
    InstalledClean,
    InstalledTampered,
    StoreFallback,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub id: u64,
    pub epoch: u32,
    pub requester: NodeId,
    pub app_id: AppId,
    pub responders: usize,
    /// Replies dropped for short device keys.
    pub filtered_out: usize,
    pub vote: VoteKind,
    pub majority_clean: Option<bool>,
    pub subjective_trust: Option<f64>,
    pub source: Option<NodeId>,
    pub verifiers: usize,
    pub positive_verdicts: usize,
    pub decision: Option<DecisionReason>,
    pub outcome: RetrievalOutcome,
    pub notices: usize,
    pub false_accusations: usize,
    pub overhead: OverheadRecord,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub unanimous: u64,
    pub split: u64,
    pub tie: u64,
    pub no_source: u64,
}

impl VoteTally {
    pub fn add(&mut self, kind: VoteKind) {
        match kind {
            VoteKind::Unanimous => self.unanimous += 1,
            VoteKind::Split => self.split += 1,
            VoteKind::Tie => self.tie += 1,
            VoteKind::NoSource => self.no_source += 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub nodes: usize,
    pub edges: usize,
    pub infections: usize,
    pub homophily: Option<f64>,
    pub votes: VoteTally,
    pub retrievals: u64,
    pub installed_clean: u64,
    pub installed_tampered: u64,
    pub store_fallbacks: u64,
    pub aborted: u64,
    pub notices: u64,
    pub false_accusations: u64,
    pub refreshes: u64,
    pub formed: u64,
    pub severed: u64,
    pub joined: u64,
    pub departed: u64,
    pub overhead_bits: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustSample {
    pub epoch: u32,
    pub owner: NodeId,
    pub peer: NodeId,
    pub resp_prob: f64,
    pub cond_trust: f64,
    pub combined: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub epochs: u32,
    pub initial_nodes: usize,
    pub initial_infections: usize,
    pub log_digest: String,
    pub assumptions: Vec<String>,
    pub scenario: Scenario,
}

pub fn assumptions() -> Vec<String> {
    [
        "overhead counts digest and tag bits only: n replies, m MACs, 2m for verification; payload reported separately",
        "combined per-peer trust is sqrt(resp_prob * cond_trust); strangers start at (0.5, 0.5)",
        "subjective trust weights cond_trust by resp_prob normalized over the polled responders",
        "call-out silence is scored against reachable holders of the app only",
        "the requester is never asked to verify the delivery it received",
        "with the store reachable, the voted digest is checked against the store's fingerprint before download",
        "a node sent a suspicion notice refreshes from the store at its next epoch when the store is reachable",
        "missing verifier replies count against acceptance",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: RunMetadata,
    pub epochs: Vec<EpochMetrics>,
    pub retrievals: Vec<RetrievalRecord>,
    pub trust: Vec<TrustSample>,
    pub forgery: Option<ForgeryStudy>,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum MetricsLine {
    Metadata(RunMetadata),
    Epoch(EpochMetrics),
    Retrieval(RetrievalRecord),
    Trust(TrustSample),
    Forgery(ForgeryStudy),
}

/// Headline numbers of one run; a row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub epochs: u32,
    pub final_nodes: usize,
    pub final_edges: usize,
    pub final_infections: usize,
    pub peak_infections: usize,
    pub retrievals: u64,
    pub installed_clean: u64,
    pub installed_tampered: u64,
    pub store_fallbacks: u64,
    pub aborted: u64,
    pub false_accusations: u64,
    /// Accepted tampered installs per retrieval.
    pub tampered_acceptance: f64,
    /// Community installs (clean or not) per retrieval.
    pub acceptance: f64,
    pub final_homophily: Option<f64>,
    pub mean_overhead_bits: f64,
    pub forgery_rate: Option<f64>,
    pub forgery_bound: Option<f64>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl MetricsReport {
    pub fn summary(&self) -> Summary {
        let sum = |f: fn(&EpochMetrics) -> u64| self.epochs.iter().map(f).sum::<u64>();
        let retrievals = sum(|e| e.retrievals);
        let clean = sum(|e| e.installed_clean);
        let tampered = sum(|e| e.installed_tampered);
        let last = self.epochs.last();
        let total_overhead: u64 = self.retrievals.iter().map(|r| r.overhead.total_bits).sum();
        Summary {
            seed: self.metadata.seed,
            epochs: self.metadata.epochs,
            final_nodes: last.map_or(self.metadata.initial_nodes, |e| e.nodes),
            final_edges: last.map_or(0, |e| e.edges),
            final_infections: last.map_or(0, |e| e.infections),
            peak_infections: self.epochs.iter().map(|e| e.infections).max().unwrap_or(0),
            retrievals,
            installed_clean: clean,
            installed_tampered: tampered,
            store_fallbacks: sum(|e| e.store_fallbacks),
            aborted: sum(|e| e.aborted),
            false_accusations: sum(|e| e.false_accusations),
            tampered_acceptance: ratio(tampered, retrievals),
            acceptance: ratio(clean + tampered, retrievals),
            final_homophily: last.and_then(|e| e.homophily),
            mean_overhead_bits: if self.retrievals.is_empty() { 0.0 } else { total_overhead as f64 / self.retrievals.len() as f64 },
            forgery_rate: self.forgery.as_ref().map(|f| f.rate),
            forgery_bound: self.forgery.as_ref().map(|f| f.analytic),
        }
    }

    pub fn lines(&self) -> Vec<MetricsLine> {
        let mut out = vec![MetricsLine::Metadata(self.metadata.clone())];
        out.extend(self.epochs.iter().cloned().map(MetricsLine::Epoch));
        out.extend(self.retrievals.iter().cloned().map(MetricsLine::Retrieval));
        out.extend(self.trust.iter().copied().map(MetricsLine::Trust));
        out.extend(self.forgery.iter().cloned().map(MetricsLine::Forgery));
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for line in self.lines() {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self> {
        let mut metadata = None;
        let report = |m| MetricsReport { metadata: m, epochs: vec![], retrievals: vec![], trust: vec![], forgery: None };
        let mut lines = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: MetricsLine = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            match parsed {
                MetricsLine::Metadata(m) => metadata = Some(m),
                other => lines.push(other),
            }
        }
        let metadata = metadata.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "no metadata record"))?;
        let mut r = report(metadata);
        for line in lines {
            match line {
                MetricsLine::Epoch(e) => r.epochs.push(e),
                MetricsLine::Retrieval(x) => r.retrievals.push(x),
                MetricsLine::Trust(t) => r.trust.push(t),
                MetricsLine::Forgery(f) => r.forgery = Some(f),
                MetricsLine::Metadata(_) => unreachable!(),
            }
        }
        Ok(r)
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(self.summary())?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_peer_model_is_under_ten_kbit() {
        let r = OverheadRecord::model(10, 10, 224);
        assert_eq!((r.callout_bits, r.mac_block_bits, r.verification_bits, r.total_bits), (2240, 2240, 4480, 8960));
        assert!(r.total_bits < 10_000);
    }

    #[test]
    fn model_prints_its_arithmetic() {
        let text = BandwidthModel { peers: 10, verifiers: 10, width_bits: 224 }.to_string();
        assert!(text.contains("10 x 224 bit = 2240 bit"));
        assert!(text.contains("2 x 10 x 224 bit = 4480 bit"));
        assert!(text.contains("8960 bit (< 10000 bit)"));
    }

    #[test]
    fn five_peers_cost_exactly_half() {
        let five = OverheadRecord::model(5, 5, 224);
        let ten = OverheadRecord::model(10, 10, 224);
        assert_eq!(five.total_bits * 2, ten.total_bits);
        assert_eq!(five.callout_bits * 2, ten.callout_bits);
        assert_eq!(five.verification_bits * 2, ten.verification_bits);
    }

    #[test]
    fn accounting_ignores_bookkeeping() {
        let mk = |kind, bits| Event::new(kind, 0, vec![]).sizes(0, bits, 0);
        let trace = vec![
            mk(EventKind::CallOut, 0),
            mk(EventKind::FingerprintReply, 224),
            mk(EventKind::FingerprintReply, 224),
            mk(EventKind::Vote, 999),
            Event::new(EventKind::AppDelivery, 0, vec![]).sizes(0, 448, 1024),
            mk(EventKind::VerifyRequest, 448),
            mk(EventKind::VerifyReply, 0),
        ];
        let r = account_overhead(&trace);
        assert_eq!(r, OverheadRecord::new(448, 448, 448, 1024));
        assert_eq!(r.total_bits, r.callout_bits + r.mac_block_bits + r.verification_bits);
    }
}
