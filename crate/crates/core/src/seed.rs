//! Stable sub-seed derivation.
//!
//! Every random stream in the crate is keyed by `(base seed, purpose string)`
//! so that results do not depend on evaluation order or thread count.

use sha2::{Digest, Sha256};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn derive_seed(base: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(purpose.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng_for(base: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, purpose))
}
