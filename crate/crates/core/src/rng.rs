//! Per-replicate random streams.
//!
//! Every replicate draws from its own ChaCha8 stream: the 256-bit key is
//! derived from the master seed (`SeedableRng::seed_from_u64`) and the
//! 64-bit stream id is the replicate index. ChaCha is a counter-mode
//! generator, so streams for distinct indices are disjoint slices of the
//! keystream and do not depend on how many replicates run or in what order.
//!
//! This derivation is part of the reproducibility contract: changing it
//! changes every published number.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream for replicate `index` under `master_seed`.
pub fn rng_stream(master_seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer, used to derive keys (tree positions, sub-seeds).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exponential(rate) waiting time by inversion.
#[inline]
pub fn exp_time<R: rand::Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}
