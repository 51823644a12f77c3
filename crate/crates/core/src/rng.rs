//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator. The frozen seed mapping is:
//!
//! * [`stream`]`(seed)` keys ChaCha8 with four words `w0..w3`, where
//!   `w0 = splitmix64(seed)` and `w(i+1) = splitmix64(w(i))`, each written
//!   little-endian into the 32-byte key.
//! * [`substream`]`(seed, path)` first folds the path into the seed with
//!   `h = splitmix64(h ^ splitmix64(tag + 0x632b_e59b_d9b4_e019))` for each
//!   tag (starting from `h = seed`), then proceeds as `stream(h)`.
//!
//! Paths start with a domain tag (see the `DOMAIN_*` constants) followed by
//! the case, model and item indices relevant to the consumer, so draws for
//! `(case 0, model 1)` and `(case 1, model 0)` never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const DOMAIN_PHANTOM: u64 = 1;
pub const DOMAIN_SHIFT: u64 = 2;
pub const DOMAIN_PERTURB: u64 = 3;
pub const DOMAIN_MOCO: u64 = 4;
pub const DOMAIN_COHORT: u64 = 5;
pub const DOMAIN_POOL: u64 = 6;
pub const DOMAIN_NOISE: u64 = 7;

#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64) -> Rng {
    let mut key = [0u8; 32];
    let mut w = seed;
    for chunk in key.chunks_exact_mut(8) {
        w = splitmix64(w);
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Folds a tag path into a seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |h, &tag| splitmix64(h ^ splitmix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))))
}

pub fn substream(seed: u64, path: &[u64]) -> Rng {
    stream(derive_seed(seed, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn draws(mut r: Rng, n: usize) -> Vec<u64> {
        (0..n).map(|_| r.next_u64()).collect()
    }

    #[test]
    fn same_seed_same_stream() {
        assert_eq!(draws(stream(42), 100), draws(stream(42), 100));
    }

    #[test]
    fn case_model_substreams_differ() {
        let a = draws(substream(42, &[DOMAIN_PERTURB, 0, 1]), 16);
        let b = draws(substream(42, &[DOMAIN_PERTURB, 1, 0]), 16);
        assert_ne!(a, b);
    }

    #[test]
    fn seed_zero_is_not_degenerate() {
        let d = draws(stream(0), 1000);
        let first = d[0];
        assert!(d.iter().any(|&v| v != first));
        assert!(d.iter().all(|&v| v != 0));
        let ones: u32 = d.iter().map(|v| v.count_ones()).sum();
        let frac = ones as f64 / (64.0 * 1000.0);
        assert!((frac - 0.5).abs() < 0.01, "bit balance {frac}");
    }

    #[test]
    fn frozen_first_draw() {
        // Golden value: changing the seed mapping invalidates stored outputs.
        assert_eq!(stream(7).next_u64(), 7_059_130_264_946_124_170);
        assert_eq!(substream(7, &[DOMAIN_PHANTOM, 0]).next_u64(), 10_432_502_222_120_984_442);
        assert_eq!(derive_seed(7, &[]), 7);
    }
}
