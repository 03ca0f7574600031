//! Labeled seed splitting. Every random stream in a run is derived from the
//! root seed and a fixed label, so adding a new stream never shifts an
//! existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha3::{Digest as _, Sha3_256};

pub const FORMATION: &str = "formation";
pub const CHURN: &str = "churn";
pub const WORKLOAD: &str = "workload";
pub const KEYS: &str = "keys";
pub const TAMPER: &str = "tamper";
pub const SOURCE: &str = "source";
pub const AUTH: &str = "auth";
pub const BEHAVIORS: &str = "behaviors";
pub const POPULATION: &str = "population";
pub const HOLDINGS: &str = "holdings";
pub const PAYLOADS: &str = "payloads";
pub const FORGERY: &str = "forgery";

pub fn derive(root: u64, label: &str) -> u64 {
    let mut h = Sha3_256::new();
    h.update(root.to_be_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("32-byte digest"))
}

pub fn stream(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn labels_give_independent_streams() {
        assert_eq!(derive(1, FORMATION), derive(1, FORMATION));
        assert_ne!(derive(1, FORMATION), derive(1, CHURN));
        assert_ne!(derive(1, FORMATION), derive(2, FORMATION));
        let a: u64 = stream(9, KEYS).random();
        let b: u64 = stream(9, KEYS).random();
        assert_eq!(a, b);
    }
}
