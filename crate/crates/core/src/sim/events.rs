//! The event log: every protocol message and state change of a run, in order.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha3::{Digest as _, Sha3_256};

use crate::artifact::AppId;
use crate::crypto::Digest;
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    CallOut,
    FingerprintReply,
    Vote,
    SuspicionNotice,
    AppDelivery,
    VerifyRequest,
    VerifyReply,
    Decision,
    Install,
    StoreFetch,
    Aborted,
    StoreRefresh,
    LinkFormed,
    LinkSevered,
    NodeJoined,
    NodeLeft,
    HubDesignated,
}

impl EventKind {
    /// Community protocol messages. Each one advances the clock by a tick;
    /// everything else is bookkeeping stamped with the current tick.
    pub fn is_message(self) -> bool {
        matches!(
            self,
            EventKind::CallOut
                | EventKind::FingerprintReply
                | EventKind::SuspicionNotice
                | EventKind::AppDelivery
                | EventKind::VerifyRequest
                | EventKind::VerifyReply
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub epoch: u32,
    pub kind: EventKind,
    /// Sender first for messages.
    pub participants: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app: Option<AppId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
    /// Verdict, acceptance, or "tampered" depending on the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub wire_bytes: u64,
    /// Digest and tag bits charged to the protocol.
    pub overhead_bits: u64,
    pub payload_bytes: u64,
}

impl Event {
    pub fn new(kind: EventKind, epoch: u32, participants: Vec<NodeId>) -> Self {
        Event {
            tick: 0,
            epoch,
            kind,
            participants,
            retrieval: None,
            app: None,
            digest: None,
            flag: None,
            detail: None,
            wire_bytes: 0,
            overhead_bits: 0,
            payload_bytes: 0,
        }
    }

    pub fn retrieval(mut self, id: u64) -> Self {
        self.retrieval = Some(id);
        self
    }

    pub fn app(mut self, app: &AppId) -> Self {
        self.app = Some(app.clone());
        self
    }

    pub fn digest(mut self, d: &Digest) -> Self {
        self.digest = Some(d.clone());
        self
    }

    pub fn flag(mut self, f: bool) -> Self {
        self.flag = Some(f);
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }

    pub fn sizes(mut self, wire_bytes: usize, overhead_bits: u64, payload_bytes: usize) -> Self {
        self.wire_bytes = wire_bytes as u64;
        self.overhead_bits = overhead_bits;
        self.payload_bytes = payload_bytes as u64;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    entries: Vec<Event>,
    clock: u64,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stamps and appends. Messages advance the clock first.
    pub fn push(&mut self, mut event: Event) {
        if event.kind.is_message() {
            self.clock += 1;
        }
        event.tick = self.clock;
        self.entries.push(event);
    }

    pub fn entries(&self) -> &[Event] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn for_retrieval(&self, id: u64) -> impl Iterator<Item = &Event> {
        self.entries.iter().filter(move |e| e.retrieval == Some(id))
    }

    fn canonical_line(e: &Event) -> Vec<u8> {
        let mut line = serde_json::to_vec(e).expect("events serialize");
        line.push(b'\n');
        line
    }

    /// SHA3-256 over the JSON-lines serialization.
    pub fn digest(&self) -> Digest {
        let mut h = Sha3_256::new();
        for e in &self.entries {
            h.update(Self::canonical_line(e));
        }
        Digest::from_bytes(h.finalize().to_vec())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            out.write_all(&Self::canonical_line(e))?;
        }
        Ok(())
    }

    /// Rebuilds a log from its JSON lines, checking that ticks never go back.
    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self> {
        let mut log = EventLog::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            if e.tick < log.clock {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "ticks go backwards"));
            }
            log.clock = e.tick;
            log.entries.push(e);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventLog {
        let mut log = EventLog::new();
        log.push(Event::new(EventKind::LinkFormed, 0, vec![NodeId(0), NodeId(1)]));
        log.push(Event::new(EventKind::CallOut, 0, vec![NodeId(0)]).retrieval(0).app(&AppId::new("a", "1")));
        log.push(
            Event::new(EventKind::FingerprintReply, 0, vec![NodeId(1), NodeId(0)])
                .retrieval(0)
                .digest(&Digest::from_bytes(vec![1, 2, 3]))
                .sizes(40, 224, 0),
        );
        log.push(Event::new(EventKind::Vote, 0, vec![NodeId(1)]).retrieval(0).detail("1-of-1"));
        log
    }

    #[test]
    fn only_messages_advance_the_clock() {
        let ticks: Vec<u64> = sample().entries().iter().map(|e| e.tick).collect();
        assert_eq!(ticks, vec![0, 1, 2, 2]);
    }

    #[test]
    fn digest_survives_a_round_trip() {
        let log = sample();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let back = EventLog::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back.entries(), log.entries());
        assert_eq!(back.digest(), log.digest());
        assert_eq!(log.digest().width_bits(), 256);
    }

    #[test]
    fn any_change_moves_the_digest() {
        let log = sample();
        let mut other = sample();
        other.entries[2].overhead_bits = 225;
        assert_ne!(log.digest(), other.digest());
        assert_ne!(log.digest(), EventLog::new().digest());
    }

    #[test]
    fn backwards_ticks_are_rejected() {
        let text = "{\"tick\":2,\"epoch\":0,\"kind\":\"vote\",\"participants\":[],\"wire_bytes\":0,\"overhead_bits\":0,\"payload_bytes\":0}\n\
                    {\"tick\":1,\"epoch\":0,\"kind\":\"vote\",\"participants\":[],\"wire_bytes\":0,\"overhead_bits\":0,\"payload_bytes\":0}\n";
        assert!(EventLog::read_jsonl(text.as_bytes()).is_err());
    }
}
