//! Seeded generators. Every random draw in the crate goes through here so
//! runs are reproducible from a single seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Generator for a named sub-stream of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; combines several keys into one well-mixed seed.
pub fn mix(keys: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &k in keys {
        h ^= k;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

pub fn normal_vec(rng: &mut Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

// Stream ids, kept distinct so adding a consumer never shifts another's draws.
pub(crate) const STREAM_TASK: u64 = 1;
pub(crate) const STREAM_INIT: u64 = 2;
pub(crate) const STREAM_BASE_SHUFFLE: u64 = 3;
pub(crate) const STREAM_REHEARSAL: u64 = 4;
pub(crate) const STREAM_LORA: u64 = 5;
pub(crate) const STREAM_BUFFER: u64 = 6;
pub(crate) const STREAM_DROPOUT: u64 = 7;
