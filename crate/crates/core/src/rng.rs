//! Seeded pseudo-randomness helpers.
//!
//! Everything random in this crate flows through an explicit 64-bit seed
//! and a ChaCha8 stream; the bounded samplers below are implemented on the
//! raw stream so outputs never depend on distribution code elsewhere.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[0, 1)` with 53 bits of precision.
pub(crate) fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn range_f64(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + unit_f64(rng) * (hi - lo)
}

/// Uniform in `0..n`. Modulo bias is irrelevant at the `n` used here.
pub(crate) fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

pub(crate) fn range_usize(rng: &mut ChaCha8Rng, lo: usize, hi_inclusive: usize) -> usize {
    lo + below(rng, hi_inclusive - lo + 1)
}

#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn byte(rng: &mut ChaCha8Rng) -> u8 {
    (rng.next_u32() & 0xff) as u8
}

/// FNV-1a over arbitrary bytes; stable across platforms and versions.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// SplitMix64-style mixing to derive independent stream seeds.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
