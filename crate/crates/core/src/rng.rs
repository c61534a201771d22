//! Seed derivation for independent, schedule-free RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator used by every stochastic operation.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of counters into a derived seed.
///
/// Distinct paths give statistically independent streams, so work items can
/// be evaluated in any order (or in parallel) with identical results.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |h, &p| splitmix64(h ^ splitmix64(p)))
}

pub fn stream(base: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, path))
}

/// Uniform draw in `[0, 1)` fixed by `(base, path)`.
pub fn unit(base: u64, path: &[u64]) -> f64 {
    (derive_seed(base, path) >> 11) as f64 / (1u64 << 53) as f64
}
