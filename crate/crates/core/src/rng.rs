//! Deterministic seed derivation.
//!
//! Every randomized component takes an explicit `u64` seed; sub-seeds for
//! independent purposes (per-net init, per-epoch shuffles, per-draw noise)
//! are derived with a SplitMix64 finalizer so streams never overlap by
//! accident.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Mix a base seed with a purpose-specific salt into an independent seed.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E3779B97F4A7C15);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// The crate-wide RNG, seeded deterministically.
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
