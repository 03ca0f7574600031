//! Canonical byte encoding of protocol messages.
//!
//! Fields are written in declaration order: integers big-endian, byte strings
//! and text with a `u32` length prefix. The first byte is a message tag.
//! Encoded sizes feed the event log; overhead accounting prices only the
//! digest and tag fields.

use crate::artifact::AppId;
use crate::crypto::{Digest, MacTag};
use crate::NodeId;

pub mod tag {
    pub const CALL_OUT: u8 = 1;
    pub const FINGERPRINT_REPLY: u8 = 2;
    pub const SUSPICION_NOTICE: u8 = 3;
    pub const APP_DELIVERY: u8 = 4;
    pub const VERIFY_REQUEST: u8 = 5;
    pub const VERIFY_REPLY: u8 = 6;
    pub const MAC_INPUT: u8 = 0x4d;
}

pub trait WireEncode {
    fn encode_into(&self, out: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    fn wire_bytes(&self) -> usize {
        self.encode().len()
    }
}

pub(crate) fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub(crate) fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

pub(crate) fn put_node(out: &mut Vec<u8>, n: NodeId) {
    put_u32(out, n.0);
}

pub(crate) fn put_app(out: &mut Vec<u8>, app: &AppId) {
    put_bytes(out, app.name.as_bytes());
    put_bytes(out, app.version.as_bytes());
}

pub(crate) fn put_digest(out: &mut Vec<u8>, d: &Digest) {
    put_bytes(out, d.as_bytes());
}

pub(crate) fn put_tag(out: &mut Vec<u8>, t: &MacTag) {
    put_u64(out, t.key_id.0);
    put_bytes(out, &t.tag);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_prefixes_are_big_endian() {
        let mut out = Vec::new();
        put_bytes(&mut out, b"ab");
        assert_eq!(out, [0, 0, 0, 2, b'a', b'b']);
        let mut out = Vec::new();
        put_app(&mut out, &AppId::new("x", ""));
        assert_eq!(out, [0, 0, 0, 1, b'x', 0, 0, 0, 0]);
    }
}
