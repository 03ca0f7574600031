//! Fingerprints, keyed tags and pairwise key management.
//!
//! Fingerprints are SHA3 digests; tags are HMAC over the same SHA3 variant,
//! emitted at the digest width so that a digest and a tag cost the same number
//! of bits on the wire.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, Mac};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest as _, Sha3_224, Sha3_256};
use thiserror::Error;

use crate::NodeId;

pub const DEFAULT_WIDTH_BITS: u32 = 224;
pub const DEFAULT_MIN_KEY_BITS: u32 = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unsupported digest width {0} bits (expected 224 or 256)")]
    UnsupportedWidth(u32),
    #[error("key of {bits} bits is below the {min}-bit minimum")]
    WeakKey { bits: u32, min: u32 },
    #[error("key length {0} bits is not a positive multiple of 8")]
    InvalidKeyLength(u32),
    #[error("refusing to authenticate an empty message")]
    EmptyMessage,
    #[error("tag was produced under key {tag} but verification key is {key}")]
    KeyIdMismatch { tag: KeyId, key: KeyId },
    #[error("tag is {found} bits wide, expected {expected}")]
    TagWidth { expected: u32, found: u32 },
    #[error("node {0} cannot pair with itself")]
    SelfPairing(NodeId),
    #[error("nodes {0} and {1} already share a key")]
    AlreadyPaired(NodeId, NodeId),
    #[error("keystore belongs to node {found}, expected node {expected}")]
    WrongStore { expected: NodeId, found: NodeId },
}

/// Supported fingerprint widths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum DigestWidth {
    #[default]
    Bits224,
    Bits256,
}

impl DigestWidth {
    pub fn from_bits(bits: u32) -> Result<Self, CryptoError> {
        match bits {
            224 => Ok(DigestWidth::Bits224),
            256 => Ok(DigestWidth::Bits256),
            other => Err(CryptoError::UnsupportedWidth(other)),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            DigestWidth::Bits224 => 224,
            DigestWidth::Bits256 => 256,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn fingerprint(self, payload: &[u8]) -> Digest {
        let bytes: Box<[u8]> = match self {
            DigestWidth::Bits224 => Sha3_224::digest(payload).as_slice().into(),
            DigestWidth::Bits256 => Sha3_256::digest(payload).as_slice().into(),
        };
        Digest(bytes)
    }
}

impl TryFrom<u32> for DigestWidth {
    type Error = CryptoError;

    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        DigestWidth::from_bits(bits)
    }
}

impl From<DigestWidth> for u32 {
    fn from(w: DigestWidth) -> u32 {
        w.bits()
    }
}

/// Fingerprint of `payload` at the requested width.
pub fn fingerprint(payload: &[u8], width_bits: u32) -> Result<Digest, CryptoError> {
    Ok(DigestWidth::from_bits(width_bits)?.fingerprint(payload))
}

/// A fixed-width digest. Equality is bitwise; renders as lowercase hex.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(Box<[u8]>);

impl Digest {
    pub fn from_bytes(bytes: impl Into<Box<[u8]>>) -> Self {
        Digest(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn width_bits(&self) -> u32 {
        self.0.len() as u32 * 8
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    /// Copy with bit `index` (counted from the first byte's MSB) inverted.
    pub fn with_flipped_bit(&self, index: usize) -> Digest {
        let mut bytes = self.0.clone();
        bytes[index / 8] ^= 0x80 >> (index % 8);
        Digest(bytes)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        hex::decode(s).map(Digest::from_bytes).map_err(serde::de::Error::custom)
    }
}

/// Opaque key identifier, drawn alongside the key material.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub u64);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Shared secret between two neighbors. Deliberately not serializable.
#[derive(Clone, PartialEq, Eq)]
pub struct MacKey {
    key_id: KeyId,
    material: Box<[u8]>,
}

impl MacKey {
    pub fn from_parts(key_id: KeyId, material: impl Into<Box<[u8]>>) -> Result<Self, CryptoError> {
        let material = material.into();
        if material.is_empty() {
            return Err(CryptoError::InvalidKeyLength(0));
        }
        Ok(MacKey { key_id, material })
    }

    pub fn generate<R: Rng + ?Sized>(rng: &mut R, length_bits: u32) -> Result<Self, CryptoError> {
        if length_bits == 0 || length_bits % 8 != 0 {
            return Err(CryptoError::InvalidKeyLength(length_bits));
        }
        let key_id = KeyId(rng.random());
        let mut material = vec![0u8; length_bits as usize / 8];
        rng.fill_bytes(&mut material);
        MacKey::from_parts(key_id, material)
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn length_bits(&self) -> u32 {
        self.material.len() as u32 * 8
    }

    pub fn material(&self) -> &[u8] {
        &self.material
    }
}

impl fmt::Debug for MacKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MacKey")
            .field("key_id", &self.key_id)
            .field("length_bits", &self.length_bits())
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MacTag {
    pub key_id: KeyId,
    pub tag: Box<[u8]>,
}

impl MacTag {
    pub fn width_bits(&self) -> u32 {
        self.tag.len() as u32 * 8
    }

    pub fn with_flipped_bit(&self, index: usize) -> MacTag {
        let mut tag = self.tag.clone();
        tag[index / 8] ^= 0x80 >> (index % 8);
        MacTag { key_id: self.key_id, tag }
    }
}

/// HMAC-SHA3 at a fixed width with a minimum key length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacScheme {
    pub width: DigestWidth,
    pub min_key_bits: u32,
}

impl Default for MacScheme {
    fn default() -> Self {
        MacScheme { width: DigestWidth::Bits224, min_key_bits: DEFAULT_MIN_KEY_BITS }
    }
}

impl MacScheme {
    pub fn new(width: DigestWidth, min_key_bits: u32) -> Self {
        MacScheme { width, min_key_bits }
    }

    fn check_key(&self, key: &MacKey) -> Result<(), CryptoError> {
        if key.length_bits() < self.min_key_bits {
            return Err(CryptoError::WeakKey { bits: key.length_bits(), min: self.min_key_bits });
        }
        Ok(())
    }

    fn full_tag(&self, key: &MacKey, message: &[u8]) -> Box<[u8]> {
        // HMAC accepts keys of any length.
        match self.width {
            DigestWidth::Bits224 => {
                let mut m = Hmac::<Sha3_224>::new_from_slice(key.material()).expect("any key length");
                m.update(message);
                m.finalize().into_bytes().as_slice().into()
            }
            DigestWidth::Bits256 => {
                let mut m = Hmac::<Sha3_256>::new_from_slice(key.material()).expect("any key length");
                m.update(message);
                m.finalize().into_bytes().as_slice().into()
            }
        }
    }

    pub fn mac(&self, key: &MacKey, message: &[u8]) -> Result<MacTag, CryptoError> {
        self.check_key(key)?;
        if message.is_empty() {
            return Err(CryptoError::EmptyMessage);
        }
        let mut tag = self.full_tag(key, message).into_vec();
        tag.truncate(self.width.bytes());
        Ok(MacTag { key_id: key.key_id(), tag: tag.into() })
    }

    /// Constant-time check of `tag` against `mac(key, message)`.
    ///
    /// A tag minted under a different key id is an error, not a `false`.
    pub fn verify(&self, key: &MacKey, message: &[u8], tag: &MacTag) -> Result<bool, CryptoError> {
        if tag.width_bits() != self.width.bits() {
            return Err(CryptoError::TagWidth { expected: self.width.bits(), found: tag.width_bits() });
        }
        if tag.key_id != key.key_id() {
            return Err(CryptoError::KeyIdMismatch { tag: tag.key_id, key: key.key_id() });
        }
        self.check_key(key)?;
        if message.is_empty() {
            return Err(CryptoError::EmptyMessage);
        }
        let ok = match self.width {
            DigestWidth::Bits224 => {
                let mut m = Hmac::<Sha3_224>::new_from_slice(key.material()).expect("any key length");
                m.update(message);
                m.verify_truncated_left(&tag.tag).is_ok()
            }
            DigestWidth::Bits256 => {
                let mut m = Hmac::<Sha3_256>::new_from_slice(key.material()).expect("any key length");
                m.update(message);
                m.verify_truncated_left(&tag.tag).is_ok()
            }
        };
        Ok(ok)
    }
}

/// Keys one node shares with its neighbors, at most one per neighbor.
#[derive(Clone, Debug)]
pub struct KeyStore {
    owner: NodeId,
    keys: BTreeMap<NodeId, MacKey>,
}

impl KeyStore {
    pub fn new(owner: NodeId) -> Self {
        KeyStore { owner, keys: BTreeMap::new() }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn get(&self, peer: NodeId) -> Option<&MacKey> {
        self.keys.get(&peer)
    }

    pub fn contains(&self, peer: NodeId) -> bool {
        self.keys.contains_key(&peer)
    }

    pub fn remove(&mut self, peer: NodeId) -> Option<MacKey> {
        self.keys.remove(&peer)
    }

    /// Overwrites the key held for `peer`. Only useful for fault injection;
    /// [`pair`] is the normal way keys get installed.
    pub fn replace(&mut self, peer: NodeId, key: MacKey) -> Option<MacKey> {
        self.keys.insert(peer, key)
    }

    pub fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.keys.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Draws a fresh key and installs it in both stores.
pub fn pair<R: Rng + ?Sized>(
    a: NodeId,
    b: NodeId,
    store_a: &mut KeyStore,
    store_b: &mut KeyStore,
    rng: &mut R,
    length_bits: u32,
) -> Result<MacKey, CryptoError> {
    if a == b {
        return Err(CryptoError::SelfPairing(a));
    }
    for (id, store) in [(a, &*store_a), (b, &*store_b)] {
        if store.owner != id {
            return Err(CryptoError::WrongStore { expected: id, found: store.owner });
        }
    }
    if store_a.contains(b) || store_b.contains(a) {
        return Err(CryptoError::AlreadyPaired(a, b));
    }
    let key = MacKey::generate(rng, length_bits)?;
    store_a.keys.insert(b, key.clone());
    store_b.keys.insert(a, key.clone());
    Ok(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Both values computed with Python's hashlib / hmac modules.
    const SHA3_224_EMPTY: &str = "6b4e03423667dbb73b6e15454f0eb1abd4597f9a1b078e3f5b5a6bc7";
    const SHA3_256_EMPTY: &str = "a7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a";
    const HMAC_SHA3_224_KEY_MSG: &str = "aa12d9663ec214318e2c28c9d651241a891ee67fd84ef7ffa9c873e7";

    fn key(bytes: &[u8]) -> MacKey {
        MacKey::from_parts(KeyId(7), bytes.to_vec()).unwrap()
    }

    fn lax() -> MacScheme {
        MacScheme::new(DigestWidth::Bits224, 8)
    }

    #[test]
    fn empty_payload_golden() {
        assert_eq!(fingerprint(b"", 224).unwrap().to_hex(), SHA3_224_EMPTY);
        assert_eq!(fingerprint(b"", 256).unwrap().to_hex(), SHA3_256_EMPTY);
    }

    #[test]
    fn fingerprint_is_deterministic_and_bit_sensitive() {
        let a = fingerprint(b"firmware image", 224).unwrap();
        assert_eq!(a, fingerprint(b"firmware image", 224).unwrap());
        let mut flipped = b"firmware image".to_vec();
        flipped[3] ^= 0x01;
        assert_ne!(a, fingerprint(&flipped, 224).unwrap());
    }

    #[test]
    fn unsupported_width_rejected() {
        assert_eq!(fingerprint(b"x", 160), Err(CryptoError::UnsupportedWidth(160)));
    }

    #[test]
    fn hmac_golden() {
        let tag = lax().mac(&key(b"key"), b"msg").unwrap();
        assert_eq!(hex::encode(&tag.tag), HMAC_SHA3_224_KEY_MSG);
    }

    #[test]
    fn mac_distinguishes_keys() {
        let s = MacScheme::default();
        let k1 = key(&[1u8; 16]);
        let k2 = key(&[2u8; 16]);
        assert_eq!(s.mac(&k1, b"m").unwrap(), s.mac(&k1, b"m").unwrap());
        assert_ne!(s.mac(&k1, b"m").unwrap().tag, s.mac(&k2, b"m").unwrap().tag);
    }

    #[test]
    fn weak_key_and_empty_message() {
        let s = MacScheme::default();
        assert_eq!(s.mac(&key(&[0u8; 8]), b"m"), Err(CryptoError::WeakKey { bits: 64, min: 128 }));
        assert_eq!(s.mac(&key(&[0u8; 16]), b""), Err(CryptoError::EmptyMessage));
    }

    #[test]
    fn verify_distinguishes_key_mismatch_from_false() {
        let s = MacScheme::default();
        let k = key(&[9u8; 16]);
        let other = MacKey::from_parts(KeyId(8), vec![9u8; 16]).unwrap();
        let tag = s.mac(&k, b"payload").unwrap();
        assert_eq!(s.verify(&k, b"payload", &tag), Ok(true));
        assert_eq!(s.verify(&k, b"paylaod", &tag), Ok(false));
        assert!(matches!(s.verify(&other, b"payload", &tag), Err(CryptoError::KeyIdMismatch { .. })));
        let narrow = MacScheme::new(DigestWidth::Bits256, 128);
        assert!(matches!(narrow.verify(&k, b"payload", &tag), Err(CryptoError::TagWidth { .. })));
    }

    #[test]
    fn pairing_is_symmetric_and_exclusive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (NodeId(1), NodeId(2));
        let mut sa = KeyStore::new(a);
        let mut sb = KeyStore::new(b);
        let k = pair(a, b, &mut sa, &mut sb, &mut rng, 128).unwrap();
        assert_eq!(sa.get(b), Some(&k));
        assert_eq!(sb.get(a), Some(&k));
        assert_eq!(pair(a, b, &mut sa, &mut sb, &mut rng, 128), Err(CryptoError::AlreadyPaired(a, b)));
        let mut sa2 = KeyStore::new(a);
        assert_eq!(pair(a, a, &mut sa, &mut sa2, &mut rng, 128), Err(CryptoError::SelfPairing(a)));
    }

    #[test]
    fn pairing_is_seed_deterministic() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut s: Vec<KeyStore> = (0..3).map(|i| KeyStore::new(NodeId(i))).collect();
            let (s0, rest) = s.split_at_mut(1);
            let k01 = pair(NodeId(0), NodeId(1), &mut s0[0], &mut rest[0], &mut rng, 128).unwrap();
            let k02 = pair(NodeId(0), NodeId(2), &mut s0[0], &mut rest[1], &mut rng, 128).unwrap();
            (k01, k02)
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn debug_redacts_material() {
        let k = key(&[0xab; 16]);
        assert!(!format!("{k:?}").contains("ab, "));
        assert!(!format!("{k:?}").contains("171"));
    }

    proptest! {
        #[test]
        fn fingerprint_has_requested_width(payload in proptest::collection::vec(any::<u8>(), 0..512), wide in any::<bool>()) {
            let w = if wide { 256 } else { 224 };
            prop_assert_eq!(fingerprint(&payload, w).unwrap().width_bits(), w);
        }

        #[test]
        fn mac_round_trip_and_bit_flips(
            material in proptest::collection::vec(any::<u8>(), 16..48),
            message in proptest::collection::vec(any::<u8>(), 1..256),
            msg_bit in any::<prop::sample::Index>(),
            tag_bit in 0usize..224,
        ) {
            let s = MacScheme::default();
            let k = MacKey::from_parts(KeyId(1), material).unwrap();
            let tag = s.mac(&k, &message).unwrap();
            prop_assert!(s.verify(&k, &message, &tag).unwrap());
            prop_assert!(!s.verify(&k, &message, &tag.with_flipped_bit(tag_bit)).unwrap());
            let mut m2 = message.clone();
            let bit = msg_bit.index(m2.len() * 8);
            m2[bit / 8] ^= 0x80 >> (bit % 8);
            prop_assert!(!s.verify(&k, &m2, &tag).unwrap());
        }

        #[test]
        fn shares_a_key_is_symmetric_and_irreflexive(ops in proptest::collection::vec((0u32..6, 0u32..6), 0..40), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut stores: Vec<KeyStore> = (0..6).map(|i| KeyStore::new(NodeId(i))).collect();
            for (a, b) in ops {
                if a == b {
                    continue;
                }
                let (lo, hi) = (a.min(b) as usize, a.max(b) as usize);
                let (left, right) = stores.split_at_mut(hi);
                let _ = pair(NodeId(lo as u32), NodeId(hi as u32), &mut left[lo], &mut right[0], &mut rng, 128);
            }
            for s in &stores {
                prop_assert!(!s.contains(s.owner()));
                for p in s.peers() {
                    prop_assert_eq!(stores[p.0 as usize].get(s.owner()), s.get(p));
                }
            }
        }
    }
}
