//! Hierarchical seeding.
//!
//! Every random draw in a run comes from a stream addressed by the master
//! seed plus a path such as `(purpose, round, client, step)`. Streams never
//! depend on the order in which clients are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes, kept distinct so that e.g. partitioning and batch
/// sampling never share draws under the same master seed.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const BATCH: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const PROBE: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
