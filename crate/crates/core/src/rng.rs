//! Seeded random streams with stable, label-keyed derivation.
//!
//! One run seed fans out to independent ChaCha8 streams, one per consumer
//! (each directed link, the OVN issuer, the scenario generator). A stream
//! is selected by hashing a textual label into the cipher's stream id, so
//! adding, removing, or reordering consumers never disturbs the draws seen
//! by the others, and equal seeds reproduce equal draws on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 64-bit FNV-1a. Stable across platforms and releases, unlike the
/// standard library's `Hasher` implementations.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Dedicated random stream for `label` under `seed`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(label.as_bytes()));
    rng
}

/// Uniform draw from `0..=hi`.
///
/// Plain modulo reduction: the bias is below 2^-40 for the millisecond
/// ranges used here, and the mapping never changes between releases.
pub fn uniform_inclusive(rng: &mut ChaCha8Rng, hi: u64) -> u64 {
    if hi == 0 {
        return 0;
    }
    if hi == u64::MAX {
        return rng.next_u64();
    }
    rng.next_u64() % (hi + 1)
}

/// Bernoulli draw, exact at the endpoints: `p <= 0` never fires and
/// `p >= 1` always fires.
pub fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    if p <= 0.0 {
        return false;
    }
    if p >= 1.0 {
        return true;
    }
    let threshold = (p * 18_446_744_073_709_551_616.0) as u128; // p * 2^64
    u128::from(rng.next_u64()) < threshold
}
