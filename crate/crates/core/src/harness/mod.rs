//! Synthetic experiments: data generation, Monte Carlo trials with common
//! random numbers, summaries and file I/O.

pub mod dgp;
pub mod io;
pub mod summary;
pub mod trials;
pub mod uest;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one named stream of one trial, independent of execution order.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(master) ^ stream) ^ index)
}

/// Stream identifiers for [`derive_seed`].
pub mod streams {
    pub const DATA: u64 = 1;
    pub const PILOT: u64 = 2;
    pub const FIT: u64 = 3;
    pub const UNIFORMS: u64 = 4;
    pub const ORACLE: u64 = 5;
    pub const HISTORICAL: u64 = 6;
}
