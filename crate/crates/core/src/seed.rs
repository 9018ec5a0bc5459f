//! Seed derivation. All randomness in an experiment descends from one root
//! seed; each consumer gets a sub-seed hashed from `(root, purpose)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(root: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

pub fn rng_for(root: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose))
}

/// Counter-based stream: the generator for item `index` depends only on
/// `(seed, index)`, so batches can be produced in any order or split.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn sub_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, "init"), derive_seed(1, "init"));
        assert_ne!(derive_seed(1, "init"), derive_seed(1, "data"));
        assert_ne!(derive_seed(1, "init"), derive_seed(2, "init"));
    }

    #[test]
    fn streams_are_independent_of_order() {
        let a: f64 = stream_rng(9, 3).random();
        let _: f64 = stream_rng(9, 2).random();
        let b: f64 = stream_rng(9, 3).random();
        assert_eq!(a.to_bits(), b.to_bits());
        let c: f64 = stream_rng(9, 4).random();
        assert_ne!(a, c);
    }
}
