//! Seeded random streams.
//!
//! Every randomized operation draws from a ChaCha8 generator keyed by a 64-bit
//! seed. Independent work units (grid cells, folds, trees) derive their own
//! seed with [`derive_seed`] so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `parts` into `seed` with the splitmix64 finalizer.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix(seed);
    for &p in parts {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
