//! Seeded random streams.
//!
//! Every stochastic routine in the crate draws from a ChaCha8 stream so that
//! results are reproducible across platforms and releases of `rand`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a base seed and a stream tag into a new seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer keeps nearby (seed, stream) pairs decorrelated
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream from a base seed and a stream tag.
pub fn derived(seed: u64, stream: u64) -> Rng {
    seeded(derive_seed(seed, stream))
}
