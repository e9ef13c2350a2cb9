//! Seed-derived random streams.
//!
//! Every randomized routine in this crate draws from its own stream,
//! derived from a master seed and a short purpose label ("env", "data",
//! "train", "noise", "eval", ...). Streams are independent by construction,
//! so adding draws to one stage never perturbs another, and the same
//! `(seed, label)` pair always reproduces the same sequence.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
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

fn seed_bytes(mut state: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

/// Deterministic stream for `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(seed ^ fnv1a(label.as_bytes())))
}

/// Deterministic stream for `(seed, label, index)`; used where each trial,
/// epoch or replica needs an independent generator.
pub fn indexed_stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mixed = fnv1a(label.as_bytes()) ^ index.wrapping_mul(0xa24b_aed4_963e_e407);
    ChaCha8Rng::from_seed(seed_bytes(seed ^ mixed))
}

/// Samples an index from an unnormalized nonnegative weight vector using a
/// single uniform draw (inverse CDF walk). The final index absorbs any
/// floating-point shortfall so the sampler never falls off the end.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    debug_assert!(!weights.is_empty());
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
