//! Materialize synthetic datasets on disk: feature containers, per-slide
//! tile manifests and the dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use imilia_core::preprocess::{Tile, TileGrid, DEFAULT_MPP, DEFAULT_TILE_SIZE};
use imilia_core::synth::{generate_bags, SynthParams};

use crate::error::{ImiliaError, Result};
use crate::manifest::{write_manifest, SlideRecord};
use crate::{container, scores};

/// Write a full synthetic dataset under `dir` and return the manifest path.
///
/// Layout: `manifest.csv`, `features/<slide>.json/.bin`,
/// `tiles/<slide>.csv`. Slides get a square row-major grid of invented tile
/// positions so downstream stages have coordinates to work with. Bit-exact
/// per seed.
pub fn write_synth_dataset(dir: &Path, params: &SynthParams, cohort: &str) -> Result<PathBuf> {
    params.validate()?;
    let features_dir = dir.join("features");
    let tiles_dir = dir.join("tiles");
    fs::create_dir_all(&features_dir).map_err(|e| ImiliaError::io(&features_dir, e))?;
    fs::create_dir_all(&tiles_dir).map_err(|e| ImiliaError::io(&tiles_dir, e))?;

    let bags = generate_bags(params);
    let mut records = Vec::with_capacity(bags.len());
    for bag in &bags {
        let stem = features_dir.join(&bag.slide_id);
        container::write_features(&stem, &bag.features, (DEFAULT_MPP, DEFAULT_MPP))?;

        // Invented square grid, row-major, matching the tile count.
        let n = bag.features.n_tiles();
        let cols = (n as f64).sqrt().ceil() as usize;
        let tiles: Vec<Tile> = (0..n)
            .map(|i| Tile {
                tile_id: bag.features.tile_id(i).to_string(),
                x_px: (i % cols) * DEFAULT_TILE_SIZE,
                y_px: (i / cols) * DEFAULT_TILE_SIZE,
            })
            .collect();
        let grid = TileGrid { tile_size_px: DEFAULT_TILE_SIZE, mpp: DEFAULT_MPP, tiles };
        let tile_path = tiles_dir.join(format!("{}.csv", bag.slide_id));
        scores::write_tile_manifest(&tile_path, &grid)?;

        records.push(SlideRecord {
            slide_id: bag.slide_id.clone(),
            cohort: cohort.to_string(),
            label: bag.label,
            mpp_x: DEFAULT_MPP,
            mpp_y: DEFAULT_MPP,
            tile_manifest: PathBuf::from(format!("tiles/{}.csv", bag.slide_id)),
            feature_path: PathBuf::from(format!("features/{}", bag.slide_id)),
        });
    }
    let manifest_path = dir.join("manifest.csv");
    write_manifest(&manifest_path, &records)?;
    Ok(manifest_path)
}
