//! Deterministic derivation of independent RNG streams from one base seed.
//!
//! Parallel code (bootstrap replicates, synthetic patches) must not share a
//! sequential RNG, or results would depend on scheduling. Instead each unit of
//! work derives its own stream from `(base seed, stream id, index)` via a
//! splitmix64 chain, which is stateless and order-free.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of splitmix64; a strong 64-bit mixer.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(base, stream, index)` into a single derived seed.
pub(crate) fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

/// A ChaCha8 generator for the derived stream.
pub(crate) fn derive_rng(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}
