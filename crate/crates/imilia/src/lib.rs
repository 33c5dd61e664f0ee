//! IO, file formats and orchestration around `imilia-core`.
//!
//! Everything that touches the filesystem lives here: dataset manifests,
//! binary feature containers, cell predictions, model files, PGM masks, SVG
//! reports, the TOML run configuration and the staged end-to-end pipeline.

pub mod cells;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model_io;
pub mod pgm;
pub mod pipeline;
pub mod report;
pub mod scores;
pub mod svg;
pub mod synthgen;

pub use error::ImiliaError;
