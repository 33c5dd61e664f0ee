//! Percentile bootstrap confidence intervals.
//!
//! Each replicate draws its own generator from `(seed, replicate index)`, so
//! results do not depend on evaluation order even if callers parallelize.

use alloc::vec::Vec;

use crate::rng;

/// Point estimate on the full sample plus a percentile interval over the
/// replicate distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// Replicates whose statistic came back non-finite (excluded from the
    /// percentiles), e.g. a single-class AUC resample.
    pub skipped: usize,
}

/// Percentile bootstrap at confidence `level` over `n_reps` resamples with
/// replacement. The statistic may return NaN for a degenerate resample; such
/// replicates are counted in `skipped` and excluded.
pub fn bootstrap_ci<T, S>(
    statistic: S,
    sample: &[T],
    n_reps: usize,
    level: f64,
    seed: u64,
) -> BootstrapCi
where
    T: Clone,
    S: Fn(&[T]) -> f64,
{
    assert!(!sample.is_empty(), "bootstrap sample must be non-empty");
    assert!(level > 0.0 && level < 1.0, "level must lie in (0,1)");

    let point = statistic(sample);
    let n = sample.len();
    let mut stats = Vec::with_capacity(n_reps);
    let mut skipped = 0usize;
    let mut resample: Vec<T> = Vec::with_capacity(n);
    for rep in 0..n_reps {
        let mut generator = rng::rng_from_seed(rng::derive_seed(seed, rep as u64));
        resample.clear();
        for _ in 0..n {
            resample.push(sample[rng::uniform_usize(&mut generator, n)].clone());
        }
        let s = statistic(&resample);
        if s.is_finite() {
            stats.push(s);
        } else {
            skipped += 1;
        }
    }
    if stats.is_empty() {
        return BootstrapCi { point, lo: f64::NAN, hi: f64::NAN, skipped };
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite replicate stats"));
    let alpha = 1.0 - level;
    let lo = percentile(&stats, alpha / 2.0);
    let hi = percentile(&stats, 1.0 - alpha / 2.0);
    BootstrapCi { point, lo, hi, skipped }
}

/// Linear-interpolation percentile of a sorted slice (h = (n-1)p).
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = libm::ceil(h) as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
