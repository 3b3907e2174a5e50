//! Deterministic seed derivation.
//!
//! Every random choice in the pipeline draws from a ChaCha stream seeded
//! through these helpers, so a run is a pure function of its configured seed.
//! `std::hash` is avoided because its output is not stable across releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for combining seed material.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// Derive a child seed from a parent seed and two stream tags.
pub fn derive2(seed: u64, tag1: u64, tag2: u64) -> u64 {
    mix(derive(seed, tag1) ^ mix(tag2.wrapping_add(0x5851f42d4c957f2d)))
}

/// FNV-1a over the bytes of a string; stable across platforms and releases.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// ChaCha stream for a (seed, tag) pair.
pub fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}
