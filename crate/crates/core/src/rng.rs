//! Seed derivation for every random stream in the crate.
//!
//! All randomness is drawn from [`ChaCha8Rng`], whose output is specified
//! bit-for-bit and therefore identical across platforms. Independent streams
//! are obtained by mixing a user seed with a purpose tag and a list of
//! indices (task, epoch, ...) through FNV-1a followed by a SplitMix64
//! finalizer. Two streams with different tags or indices never share a seed
//! unless the 64-bit mix collides.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `seed`, `tag` and `indices` into a single 64-bit stream seed.
pub fn derive_seed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut absorb = |bytes: &[u8]| {
        for &byte in bytes {
            h ^= u64::from(byte);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    absorb(&seed.to_le_bytes());
    absorb(tag.as_bytes());
    for index in indices {
        absorb(&index.to_le_bytes());
    }
    splitmix64(h)
}

/// Returns the generator for stream `(seed, tag, indices)`.
pub fn stream(seed: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, indices))
}

/// `n` independent draws from `N(0, std^2)`.
pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
