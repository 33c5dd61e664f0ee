//! Run configuration: one TOML file with a section per module. Unknown keys
//! are rejected; every default matches the reference hyperparameters.

use std::fs;
use std::path::{Path, PathBuf};

use imilia_core::chowder::ChowderConfig;
use imilia_core::episeg::{self, ExpansionGeometry};
use serde::{Deserialize, Serialize};

use crate::error::{ImiliaError, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub paths: PathsSection,
    pub chowder: ChowderSection,
    pub episeg: EpiSegSection,
    pub preprocess: PreprocessSection,
    pub extremes: ExtremesSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, threads: 0 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Dataset manifest (required by the pipeline).
    pub manifest: Option<PathBuf>,
    /// Slide image for the optional preprocess stage.
    pub image: Option<PathBuf>,
    /// Directory of per-tile cell JSONL files.
    pub cells_dir: Option<PathBuf>,
    /// Directory of per-tile expanded patch-grid containers.
    pub patch_grids_dir: Option<PathBuf>,
    /// Trained epithelium-classifier stem.
    pub episeg_model: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChowderSection {
    pub channels: usize,
    pub extremes_per_side: usize,
    pub mlp_hidden: Vec<usize>,
    pub mlp_dropout: Vec<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_tiles: usize,
    pub n_epochs: usize,
    pub folds: usize,
    pub standardize: bool,
}

impl Default for ChowderSection {
    fn default() -> Self {
        let base = ChowderConfig::default();
        Self {
            channels: base.channels,
            extremes_per_side: base.extremes_per_side,
            mlp_hidden: base.mlp_hidden,
            mlp_dropout: base.mlp_dropout,
            learning_rate: base.learning_rate,
            batch_size: base.batch_size,
            max_tiles: base.max_tiles,
            n_epochs: base.n_epochs,
            folds: 5,
            standardize: base.standardize,
        }
    }
}

impl ChowderSection {
    pub fn to_config(&self, seed: u64) -> ChowderConfig {
        ChowderConfig {
            channels: self.channels,
            extremes_per_side: self.extremes_per_side,
            mlp_hidden: self.mlp_hidden.clone(),
            mlp_dropout: self.mlp_dropout.clone(),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_tiles: self.max_tiles,
            n_epochs: self.n_epochs,
            seed,
            standardize: self.standardize,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpiSegSection {
    pub c: f64,
    pub folds: usize,
    pub patch_px: usize,
    pub tile_px: usize,
    pub expansion_px: usize,
    pub threshold: f64,
}

impl Default for EpiSegSection {
    fn default() -> Self {
        let g = ExpansionGeometry::default();
        Self {
            c: episeg::DEFAULT_C,
            folds: episeg::DEFAULT_SELECT_FOLDS,
            patch_px: g.patch_px,
            tile_px: g.tile_px,
            expansion_px: g.expansion_px,
            threshold: episeg::DEFAULT_THRESHOLD,
        }
    }
}

impl EpiSegSection {
    pub fn geometry(&self) -> ExpansionGeometry {
        ExpansionGeometry {
            tile_px: self.tile_px,
            expansion_px: self.expansion_px,
            patch_px: self.patch_px,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub tile_size: usize,
    pub min_tissue_frac: f64,
    pub mpp: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            tile_size: imilia_core::preprocess::DEFAULT_TILE_SIZE,
            min_tissue_frac: imilia_core::preprocess::DEFAULT_MIN_TISSUE_FRAC,
            mpp: imilia_core::preprocess::DEFAULT_MPP,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtremesSection {
    pub n_per_side: usize,
}

impl Default for ExtremesSection {
    fn default() -> Self {
        Self { n_per_side: 1000 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| ImiliaError::io(path, e))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| ImiliaError::format(path, e.to_string()))?;
        Ok(config)
    }

    /// Resolve relative paths against the config file's directory.
    pub fn resolve_paths(&mut self, config_path: &Path) {
        let base = config_path.parent().unwrap_or_else(|| Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        };
        fix(&mut self.paths.manifest);
        fix(&mut self.paths.image);
        fix(&mut self.paths.cells_dir);
        fix(&mut self.paths.patch_grids_dir);
        fix(&mut self.paths.episeg_model);
    }
}
