//! Seed derivation for named random sub-streams.
//!
//! Every run owns one 64-bit seed. Components draw from sub-streams derived
//! from `(seed, name, indices...)` so that, for example, changing how many
//! numbers the initializer consumes never perturbs the sampler stream, and
//! per-sample generators can be evaluated in any order (or in parallel)
//! without changing the dataset.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a deterministic generator from the run seed, a stream name and
/// optional indices (epoch, sample id, ...). ChaCha8 keeps the derivation
/// stable across platforms and library versions.
pub fn derive_rng(seed: u64, name: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a(name.as_bytes());
    for &ix in indices {
        state ^= splitmix64(&mut { ix.wrapping_mul(FNV_PRIME) }).wrapping_add(ix);
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Convenience for streams without indices.
pub fn stream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    derive_rng(seed, name, &[])
}
