//! Seeded, addressable RNG streams.
//!
//! Every random draw in the engine comes from a ChaCha stream addressed by
//! `(seed, chain, lane)`. Chains index independent sampling trajectories,
//! lanes separate purposes inside one chain (initial noise, per-level switch
//! noise, churn), so outputs never depend on scheduling or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane used for a trajectory's initial noise draw.
pub const LANE_INIT: u64 = 0;
/// Lane used for stochastic churn draws.
pub const LANE_CHURN: u64 = 1;

/// Lane carrying the fresh high-resolution noise injected when switching up
/// into `level`.
pub fn lane_switch(level: usize) -> u64 {
     0x100 + level as u64
}

fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    *state = z ^ (z >> 31);
}

/// Derives the deterministic stream for `(seed, chain, lane)`.
pub fn stream(seed: u64, chain: u64, lane: u64) -> ChaCha8Rng {
    let mut s = seed;
    splitmix64(&mut s);
    s ^= chain.wrapping_mul(0xd605_0b4a_95f7_f1a7);
    splitmix64(&mut s);
    s ^= lane.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    splitmix64(&mut s);
    let mut key = [0u8; 32];
    for word in 0..4 {
        splitmix64(&mut s);
        key[word * 8..word * 8 + 8].copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
