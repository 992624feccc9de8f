//! Seeded random number generation.
//!
//! All randomized operations take an [`RngSeed`]; the same seed always yields
//! a bit-identical stream, which is what makes repeated experiment runs
//! reproducible. Independent stages (CNN init, batch shuffling, inducing-point
//! selection, ...) derive child seeds from string tags so that changing one
//! stage never perturbs another.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        RngSeed(seed)
    }

    /// Fresh generator for this seed.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Child seed for a named stage. FNV-1a over the tag, mixed through
    /// splitmix64 so related base seeds do not produce related streams.
    pub fn derive(&self, tag: &str) -> RngSeed {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        RngSeed(splitmix64(self.0 ^ h))
    }

    /// Child seed indexed by run number.
    pub fn derive_run(&self, tag: &str, run: u64) -> RngSeed {
        RngSeed(splitmix64(self.derive(tag).0 ^ splitmix64(run)))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: RngSeed) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    idx
}

/// Seeded sample of `k` distinct values from `pool`, without replacement.
/// Order of the result follows the draw order.
pub fn sample_without_replacement<T: Copy>(pool: &[T], k: usize, seed: RngSeed) -> Vec<T> {
    assert!(k <= pool.len(), "sample larger than pool");
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut rng = seed.rng();
    // Partial Fisher-Yates: only the first k positions are needed.
    for i in 0..k {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..k].iter().map(|&i| pool[i]).collect()
}
