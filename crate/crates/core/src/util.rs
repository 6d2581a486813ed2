//! Seed derivation and hashing shared across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for `(seed, purpose, counter)`; the same triple
/// always yields the same stream, which makes resumed runs reproducible.
pub fn stream_rng(seed: u64, purpose: u64, counter: u64) -> ChaCha8Rng {
    let key = mix64(mix64(seed ^ mix64(purpose)) ^ counter);
    ChaCha8Rng::seed_from_u64(key)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
