//! Seed derivation and deterministic substreams.
//!
//! Every randomized step owns a ChaCha8 generator derived from the run seed.
//! Per-entity generators (one per subject, one per Monte Carlo chunk) are
//! placed on independent ChaCha streams so results do not depend on iteration
//! or thread order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generator for a named entity (e.g. one subject) under a run seed.
pub fn subject_rng(seed: u64, subject_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stable_hash(subject_id.as_bytes()))
}

/// Generator on substream `stream` of the given seed. Distinct streams are
/// statistically independent, so chunked work can run in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
