//! Seed derivation for reproducible parallel runs.
//!
//! Every chain owns a `ChaCha8Rng` seeded from a 64-bit value derived from the
//! master seed by a counter-based split, so results never depend on which
//! worker ran a task or in what order tasks completed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

const DOMAIN_SUBSPACE: u64 = 0x5355_4253_5041_4345;
const DOMAIN_EXPLORE: u64 = 0x4558_504c_4f52_4521;
const DOMAIN_CHAIN: u64 = 0x4348_4149_4e53_2121;

/// SplitMix64 finalizer. A bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Injective in `index` for a fixed `(parent, domain)`: the counter step is
/// odd, so `base + step * (index + 1)` never repeats modulo 2^64, and the
/// outer mix is a bijection.
fn split(parent: u64, domain: u64, index: u64) -> u64 {
    let base = mix64(parent ^ domain);
    mix64(base.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

/// Seed for the sampling task of subspace `index`.
pub fn derive_subspace_seed(master: u64, index: usize) -> u64 {
    split(master, DOMAIN_SUBSPACE, index as u64)
}

/// Seed for exploration chain `index`.
pub fn derive_exploration_seed(master: u64, index: usize) -> u64 {
    split(master, DOMAIN_EXPLORE, index as u64)
}

/// Seed for chain `index` inside a subspace task seeded with `task_seed`.
pub fn derive_chain_seed(task_seed: u64, index: usize) -> u64 {
    split(task_seed, DOMAIN_CHAIN, index as u64)
}

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}
