//! Seed derivation shared by every randomized component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream label and an index (splitmix64 finalizer).
pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream labels for [`derive`].
pub mod stream {
    pub const CLIENT: u64 = 1;
    pub const SAMPLER: u64 = 2;
    pub const MODEL: u64 = 3;
    pub const DATA: u64 = 4;
    pub const PARTITION: u64 = 5;
}
