//! Apps, their clean and tampered variants, and what each node has installed.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, DigestWidth};
use crate::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArtifactError {
    #[error("app {0} is already published")]
    AlreadyPublished(AppId),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AppId {
    pub name: String,
    pub version: String,
}

impl AppId {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        AppId { name: name.into(), version: version.into() }
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Store,
    /// Repacked by the given adversary.
    Tampered(NodeId),
}

/// An installation package. Payload bytes are shared, so clones are cheap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppPackage {
    app_id: AppId,
    payload: Arc<[u8]>,
    provenance: Provenance,
}

impl AppPackage {
    pub fn app_id(&self) -> &AppId {
        &self.app_id
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_tampered(&self) -> bool {
        matches!(self.provenance, Provenance::Tampered(_))
    }

    pub fn fingerprint(&self, width: DigestWidth) -> Digest {
        width.fingerprint(&self.payload)
    }
}

/// The app store: the single source of clean packages.
#[derive(Clone, Debug, Default)]
pub struct AppCatalog {
    clean: BTreeMap<AppId, AppPackage>,
}

impl AppCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish_clean(&mut self, app_id: AppId, payload: impl Into<Arc<[u8]>>) -> Result<AppPackage, ArtifactError> {
        if self.clean.contains_key(&app_id) {
            return Err(ArtifactError::AlreadyPublished(app_id));
        }
        let pkg = AppPackage { app_id: app_id.clone(), payload: payload.into(), provenance: Provenance::Store };
        self.clean.insert(app_id, pkg.clone());
        Ok(pkg)
    }

    pub fn clean(&self, app_id: &AppId) -> Option<&AppPackage> {
        self.clean.get(app_id)
    }

    pub fn clean_digest(&self, app_id: &AppId, width: DigestWidth) -> Option<Digest> {
        self.clean(app_id).map(|p| p.fingerprint(width))
    }

    pub fn apps(&self) -> impl Iterator<Item = &AppId> {
        self.clean.keys()
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

/// Seeded repack of `original`: a handful of bytes are XOR-ed with nonzero
/// masks (an empty payload grows by one byte). The result always fingerprints
/// differently from `original` at every supported width.
pub fn tamper<R: Rng + ?Sized>(original: &AppPackage, adversary: NodeId, rng: &mut R) -> AppPackage {
    loop {
        let mut bytes = original.payload.to_vec();
        if bytes.is_empty() {
            bytes.push(rng.random());
        } else {
            let flips = rng.random_range(1..=8usize);
            for _ in 0..flips {
                let at = rng.random_range(0..bytes.len());
                bytes[at] ^= rng.random_range(1..=u8::MAX);
            }
        }
        let differs = [DigestWidth::Bits224, DigestWidth::Bits256]
            .iter()
            .all(|w| w.fingerprint(&bytes) != original.fingerprint(*w));
        if differs {
            return AppPackage {
                app_id: original.app_id.clone(),
                payload: bytes.into(),
                provenance: Provenance::Tampered(adversary),
            };
        }
    }
}

/// Per-node installed packages, at most one per app.
#[derive(Clone, Debug, Default)]
pub struct InstallState {
    by_node: BTreeMap<NodeId, BTreeMap<AppId, AppPackage>>,
}

impl InstallState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs `pkg` on `node`, returning whatever it replaced.
    pub fn install(&mut self, node: NodeId, pkg: AppPackage) -> Option<AppPackage> {
        self.by_node.entry(node).or_default().insert(pkg.app_id.clone(), pkg)
    }

    pub fn get(&self, node: NodeId, app_id: &AppId) -> Option<&AppPackage> {
        self.by_node.get(&node)?.get(app_id)
    }

    pub fn holds(&self, node: NodeId, app_id: &AppId) -> bool {
        self.get(node, app_id).is_some()
    }

    pub fn holders<'a>(&'a self, app_id: &'a AppId) -> impl Iterator<Item = (NodeId, &'a AppPackage)> + 'a {
        self.by_node.iter().filter_map(move |(n, apps)| apps.get(app_id).map(|p| (*n, p)))
    }

    pub fn remove_node(&mut self, node: NodeId) {
        self.by_node.remove(&node);
    }

    /// Every (node, app) entry whose package is tampered.
    pub fn infected(&self) -> impl Iterator<Item = (NodeId, &AppId)> + '_ {
        self.by_node
            .iter()
            .flat_map(|(n, apps)| apps.values().filter(|p| p.is_tampered()).map(move |p| (*n, &p.app_id)))
    }

    pub fn infection_count(&self) -> usize {
        self.infected().count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn app(name: &str) -> AppId {
        AppId::new(name, "1.0")
    }

    #[test]
    fn publish_and_fingerprint() {
        let mut cat = AppCatalog::new();
        let p = cat.publish_clean(app("cam"), b"clean bytes".to_vec()).unwrap();
        assert_eq!(p.fingerprint(DigestWidth::Bits224), DigestWidth::Bits224.fingerprint(b"clean bytes"));
        assert_eq!(p.provenance(), Provenance::Store);
        assert_eq!(
            cat.publish_clean(app("cam"), b"other".to_vec()),
            Err(ArtifactError::AlreadyPublished(app("cam")))
        );
    }

    #[test]
    fn identical_payloads_under_distinct_ids() {
        let mut cat = AppCatalog::new();
        let a = cat.publish_clean(app("a"), b"same".to_vec()).unwrap();
        let b = cat.publish_clean(app("b"), b"same".to_vec()).unwrap();
        assert_eq!(a.fingerprint(DigestWidth::Bits224), b.fingerprint(DigestWidth::Bits224));
    }

    #[test]
    fn tamper_changes_fingerprint_and_is_seeded() {
        let mut cat = AppCatalog::new();
        let clean = cat.publish_clean(app("tv"), vec![0u8; 1024]).unwrap();
        let t1 = tamper(&clean, NodeId(4), &mut ChaCha8Rng::seed_from_u64(1));
        let t1b = tamper(&clean, NodeId(4), &mut ChaCha8Rng::seed_from_u64(1));
        let t2 = tamper(&clean, NodeId(5), &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(t1, t1b);
        assert_ne!(t1.fingerprint(DigestWidth::Bits224), clean.fingerprint(DigestWidth::Bits224));
        assert_eq!(t1.provenance(), Provenance::Tampered(NodeId(4)));
        assert_eq!(t2.provenance(), Provenance::Tampered(NodeId(5)));
        // Re-tampering still moves the fingerprint.
        let t3 = tamper(&t1, NodeId(4), &mut ChaCha8Rng::seed_from_u64(9));
        assert_ne!(t3.fingerprint(DigestWidth::Bits224), t1.fingerprint(DigestWidth::Bits224));
    }

    #[test]
    fn tamper_empty_payload() {
        let mut cat = AppCatalog::new();
        let clean = cat.publish_clean(app("e"), Vec::new()).unwrap();
        let t = tamper(&clean, NodeId(0), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.payload().len(), 1);
    }

    #[test]
    fn install_replaces_and_counts_infections() {
        let mut cat = AppCatalog::new();
        let clean = cat.publish_clean(app("tv"), vec![1u8; 64]).unwrap();
        let bad = tamper(&clean, NodeId(9), &mut ChaCha8Rng::seed_from_u64(0));
        let mut st = InstallState::new();
        assert!(!st.holds(NodeId(1), clean.app_id()));
        st.install(NodeId(1), clean.clone());
        assert_eq!(st.get(NodeId(1), clean.app_id()), Some(&clean));
        assert_eq!(st.infection_count(), 0);
        assert_eq!(st.install(NodeId(1), bad.clone()), Some(clean.clone()));
        assert_eq!(st.get(NodeId(1), clean.app_id()), Some(&bad));
        st.install(NodeId(2), clean.clone());
        assert_eq!(st.infection_count(), 1);
        assert_eq!(st.holders(clean.app_id()).count(), 2);
        st.remove_node(NodeId(1));
        assert_eq!(st.infection_count(), 0);
    }

    proptest! {
        #[test]
        fn provenance_matches_clean_fingerprint(seed in any::<u64>(), len in 0usize..256, rounds in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cat = AppCatalog::new();
            let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let clean = cat.publish_clean(app("p"), payload).unwrap();
            let reference = cat.clean_digest(clean.app_id(), DigestWidth::Bits224).unwrap();
            let mut pkg = clean.clone();
            prop_assert_eq!(pkg.fingerprint(DigestWidth::Bits224), reference.clone());
            for _ in 0..rounds {
                pkg = tamper(&pkg, NodeId(1), &mut rng);
                prop_assert!(pkg.is_tampered());
                prop_assert_ne!(pkg.fingerprint(DigestWidth::Bits224), reference.clone());
            }
        }
    }
}
