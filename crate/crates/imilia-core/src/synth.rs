//! Synthetic bag generation: a desk-scale substrate with a controllable
//! instance-level signal.
//!
//! Background tiles are standard Gaussians in `dim` dimensions. Positive
//! slides contain a fraction of "signal" tiles shifted by `separation` along
//! dimension 0; negative slides contain none. With a large separation any
//! instance-level linear scorer recovers the slide label.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::features::{Bag, FeatureMatrix};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub n_slides: usize,
    /// Inclusive range for the per-slide tile count.
    pub n_tiles_range: (usize, usize),
    pub dim: usize,
    /// Mean shift of signal tiles along dimension 0, in units of the noise
    /// standard deviation.
    pub separation: f64,
    /// Fraction of tiles carrying the signal in positive slides.
    pub signal_fraction: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_slides: 50,
            n_tiles_range: (100, 300),
            dim: 32,
            separation: 6.0,
            signal_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SynthError {
    NegativeSeparation,
    BadSignalFraction,
    BadTileRange,
    ZeroDim,
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::NegativeSeparation => write!(f, "separation must be >= 0"),
            SynthError::BadSignalFraction => write!(f, "signal_fraction must lie in [0,1]"),
            SynthError::BadTileRange => write!(f, "tile range must satisfy 1 <= min <= max"),
            SynthError::ZeroDim => write!(f, "dim must be >= 1"),
        }
    }
}

impl core::error::Error for SynthError {}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.separation < 0.0 {
            return Err(SynthError::NegativeSeparation);
        }
        if !(0.0..=1.0).contains(&self.signal_fraction) {
            return Err(SynthError::BadSignalFraction);
        }
        let (lo, hi) = self.n_tiles_range;
        if lo < 1 || lo > hi {
            return Err(SynthError::BadTileRange);
        }
        if self.dim == 0 {
            return Err(SynthError::ZeroDim);
        }
        Ok(())
    }
}

/// Generate labeled bags. Slides alternate negative/positive; a fixed seed
/// reproduces bit-identical embeddings.
pub fn generate_bags(params: &SynthParams) -> Vec<Bag> {
    params.validate().expect("invalid synth parameters");
    let mut generator = rng::rng_from_seed(params.seed);
    let (lo, hi) = params.n_tiles_range;
    let mut bags = Vec::with_capacity(params.n_slides);
    for slide in 0..params.n_slides {
        let label = (slide % 2) as u8;
        let n_tiles = lo + rng::uniform_usize(&mut generator, hi - lo + 1);
        let mut data = Vec::with_capacity(n_tiles * params.dim);
        for _ in 0..n_tiles * params.dim {
            data.push(rng::normal_f64(&mut generator) as f32);
        }
        if label == 1 && params.signal_fraction > 0.0 && params.separation > 0.0 {
            let wanted = libm::round(params.signal_fraction * n_tiles as f64) as usize;
            let n_signal = wanted.clamp(1, n_tiles);
            let rows = rng::sample_indices(&mut generator, n_tiles, n_signal);
            for &t in &rows {
                data[t * params.dim] += params.separation as f32;
            }
        }
        let tile_ids: Vec<String> = (0..n_tiles).map(|t| format!("t{t:04}")).collect();
        let features = FeatureMatrix::new(params.dim, data, tile_ids).expect("generated finite");
        bags.push(Bag { slide_id: format!("synth_{slide:04}"), label: Some(label), features });
    }
    bags
}
