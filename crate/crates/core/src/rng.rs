//! Stable seed derivation. Seeds must not depend on the std hasher, whose
//! output is not guaranteed across releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a run seed with a string label and an index.
pub fn derive_seed(run_seed: u64, label: &str, index: u64) -> u64 {
    let mut h = splitmix64(run_seed);
    for b in label.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ splitmix64(index))
}

/// Per-step generator. Step `t` of a chain always sees the same stream, so a
/// chain resumed from a checkpoint continues exactly as an uninterrupted one.
pub fn step_rng(chain_seed: u64, step: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(derive_seed(chain_seed, "step", step))
}

pub fn seeded(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}
