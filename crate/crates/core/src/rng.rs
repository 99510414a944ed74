//! Seed derivation for reproducible, schedule-independent Monte Carlo.
//!
//! A replication is identified by `(master seed, replication index)`; each
//! replication draws from independent ChaCha streams, one per purpose, so the
//! same path is regenerated bit for bit no matter which thread builds it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for inside one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    /// Disorder time and post-disorder rate.
    Disorder = 0,
    /// Arrivals and marks before the disorder (or throughout under `P₀`).
    PreChange = 1,
    /// Arrivals and marks after the disorder.
    PostChange = 2,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master`.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Generator for one purpose within the replication keyed by `path_seed`.
pub fn stream(path_seed: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(path_seed);
    rng.set_stream(purpose as u64);
    rng
}
