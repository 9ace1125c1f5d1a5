//! Seed derivation so every stochastic draw is a pure function of the master
//! seed and the coordinates of the draw (agent, week, tree, ...).

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix64(master), |acc, c| mix64(acc ^ mix64(*c)))
}
