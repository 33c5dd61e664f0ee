//! Seeded randomness helpers.
//!
//! Every stochastic step in the crate draws from a [`ChaCha8Rng`] seeded from
//! a `u64`, so identical seeds reproduce identical bit streams regardless of
//! platform. Substreams (per fold, per bootstrap replicate) are derived with
//! [`derive_seed`] so parallel schedules cannot change results.

use alloc::vec::Vec;

pub use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Create a generator from a bare `u64` seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent substream seed from a base seed and a stream index.
///
/// SplitMix64 finalizer over the combined value; consecutive stream indices
/// map to well-separated seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` with 53 bits of resolution.
pub fn uniform_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Uniform draw in `(0, 1]`; safe as a log argument.
fn uniform_open_f64(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Uniform integer in `[0, n)` via widening multiply.
pub fn uniform_usize(rng: &mut ChaCha8Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (((rng.next_u64() as u128) * (n as u128)) >> 64) as usize
}

/// Standard normal draw (Box-Muller, cosine branch).
pub fn normal_f64(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = uniform_open_f64(rng);
    let u2 = uniform_f64(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_usize(rng, i + 1);
        items.swap(i, j);
    }
}

/// Sample `k` distinct indices from `0..n` (all of them when `k >= n`).
///
/// Partial Fisher-Yates; the result preserves the shuffled draw order.
pub fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let take = k.min(n);
    for i in 0..take {
        let j = i + uniform_usize(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = rng_from_seed(7);
        let mut b = rng_from_seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_seed_separates_streams() {
        let s0 = derive_seed(42, 0);
        let s1 = derive_seed(42, 1);
        assert_ne!(s0, s1);
        assert_eq!(s0, derive_seed(42, 0));
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = rng_from_seed(1);
        for _ in 0..10_000 {
            let u = uniform_f64(&mut rng);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut rng = rng_from_seed(2);
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = normal_f64(&mut rng);
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn sample_indices_distinct_and_bounded() {
        let mut rng = rng_from_seed(3);
        let idx = sample_indices(&mut rng, 50, 20);
        assert_eq!(idx.len(), 20);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
        assert!(sorted.iter().all(|&i| i < 50));
    }

    #[test]
    fn sample_indices_saturates() {
        let mut rng = rng_from_seed(4);
        let mut idx = sample_indices(&mut rng, 5, 99);
        idx.sort_unstable();
        assert_eq!(idx, alloc::vec![0, 1, 2, 3, 4]);
    }
}
