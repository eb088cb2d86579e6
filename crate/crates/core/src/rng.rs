//! Seed splitting. Every random draw in the crate comes from a ChaCha8 stream
//! derived from one user seed, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// splitmix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a named purpose (`tag`) under `seed`.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag.rotate_left(17))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` under `seed` (one per signal, per sample, ...).
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

// Fixed tags used for sub-seeds.
pub const TAG_INIT_GEN: u64 = 1;
pub const TAG_INIT_DISC: u64 = 2;
pub const TAG_SHUFFLE: u64 = 3;
pub const TAG_NOISE: u64 = 4;
pub const TAG_LABELS: u64 = 5;
pub const TAG_AUGMENT: u64 = 6;
pub const TAG_SUBSAMPLE: u64 = 7;
pub const TAG_DATASET: u64 = 8;
pub const TAG_MIL_HEADS: u64 = 9;
pub const TAG_ATTENTION: u64 = 10;
