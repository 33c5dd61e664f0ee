//! Algorithmic core for slide-level inflammation analysis.
//!
//! The crate is `no_std` (with `alloc`) and holds everything that computes:
//! the multi-channel extreme-tile MIL classifier ([`chowder`]), the patch-level
//! epithelium classifier ([`episeg`]), in-epithelium cell densities
//! ([`interpret`]), tissue masking and tessellation ([`preprocess`]),
//! evaluation metrics ([`metrics`]), fold construction ([`folds`]), synthetic
//! bag generation ([`synth`]) and distribution summaries ([`summary`]).
//!
//! File formats, the CLI and everything that touches the filesystem live in
//! the companion `imilia` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod chowder;
pub mod episeg;
pub mod features;
pub mod folds;
pub mod interpret;
pub mod mask;
pub mod metrics;
pub mod preprocess;
pub mod rng;
pub mod summary;
pub mod synth;

pub use features::{Bag, FeatureError, FeatureMatrix};
pub use mask::BinMask;
