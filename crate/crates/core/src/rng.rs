//! Seed-stream plumbing.
//!
//! Every random object in the simulator draws from a `ChaCha8Rng` whose
//! (seed, stream) pair is derived from a base seed plus a fixed purpose tag,
//! so resampling one component (say, transitions) never perturbs another
//! (say, the connectivity graph), and parallel generation matches serial.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the independent random components of a sampled world.
pub mod stream {
    pub const CONNECTIVITY: u64 = 1;
    pub const TRANSITION: u64 = 2;
    pub const INITIAL_DIST: u64 = 3;
    pub const REWARD: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    /// Trajectory `i` draws from stream `TRAJECTORY_BASE + i`.
    pub const TRAJECTORY_BASE: u64 = 1 << 20;
}

/// RNG for (seed, stream). Same pair, same draws, forever.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.into());
    rng
}

/// splitmix64 finalizer; used to derive child seeds that stay stable when
/// more children are added later.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for an indexed sub-task (replica, iteration, ...).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// FNV-1a over raw bytes; cheap content fingerprint for provenance records.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
