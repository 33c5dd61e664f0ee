//! Binary embedding containers: a JSON header sidecar plus a raw
//! little-endian float32 payload.
//!
//! Two layouts share the format: per-slide tile features
//! (`imilia.features.v1`, `n_tiles x dim` with tile ids) and patch-embedding
//! grids (`imilia.patchgrid.v1`, `rows x cols x dim`). A container named
//! `<stem>` lives in `<stem>.json` + `<stem>.bin`; writing is canonical, so
//! read-then-write reproduces both files byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use imilia_core::episeg::PatchGrid;
use imilia_core::FeatureMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ImiliaError, Result};

pub const FEATURES_SCHEMA: &str = "imilia.features.v1";
pub const PATCH_GRID_SCHEMA: &str = "imilia.patchgrid.v1";
const DTYPE: &str = "f32le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesHeader {
    schema: String,
    n_tiles: usize,
    dim: usize,
    dtype: String,
    tile_ids: Vec<String>,
    mpp_x: f64,
    mpp_y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchGridHeader {
    pub schema: String,
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub dtype: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tile_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slide_id: Option<String>,
    /// Patch offset of the grid inside the ideal expansion, for grids
    /// truncated at a slide border. Defaults to 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_col: Option<usize>,
}

fn json_path(stem: &Path) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn bin_path(stem: &Path) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(".bin");
    PathBuf::from(p)
}

fn read_payload(stem: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let path = bin_path(stem);
    let bytes = fs::read(&path).map_err(|e| ImiliaError::io(&path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(ImiliaError::format(
            &path,
            format!("payload is {} bytes, header implies {}", bytes.len(), expected_len * 4),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_payload(stem: &Path, data: &[f32]) -> Result<()> {
    let path = bin_path(stem);
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, bytes).map_err(|e| ImiliaError::io(&path, e))
}

fn read_header<T: for<'de> Deserialize<'de>>(stem: &Path) -> Result<T> {
    let path = json_path(stem);
    let text = fs::read_to_string(&path).map_err(|e| ImiliaError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| ImiliaError::format(&path, e.to_string()))
}

fn write_header<T: Serialize>(stem: &Path, header: &T) -> Result<()> {
    let path = json_path(stem);
    let text = serde_json::to_string(header).expect("header serializes");
    fs::write(&path, text).map_err(|e| ImiliaError::io(&path, e))
}

/// Check that a tile-features container exists and its header parses;
/// returns `(n_tiles, dim)` without touching the payload.
pub fn peek_features(stem: &Path) -> Result<(usize, usize)> {
    let header: FeaturesHeader = read_header(stem)?;
    if header.schema != FEATURES_SCHEMA {
        return Err(ImiliaError::format(
            json_path(stem),
            format!("schema {:?}, want {FEATURES_SCHEMA:?}", header.schema),
        ));
    }
    Ok((header.n_tiles, header.dim))
}

/// Read a tile-features container; dimensions, tile-id alignment and
/// finiteness are all validated.
pub fn read_features(stem: &Path) -> Result<FeatureMatrix> {
    let header: FeaturesHeader = read_header(stem)?;
    if header.schema != FEATURES_SCHEMA {
        return Err(ImiliaError::format(
            json_path(stem),
            format!("schema {:?}, want {FEATURES_SCHEMA:?}", header.schema),
        ));
    }
    if header.dtype != DTYPE {
        return Err(ImiliaError::format(json_path(stem), format!("dtype {:?}", header.dtype)));
    }
    if header.tile_ids.len() != header.n_tiles {
        return Err(ImiliaError::format(
            json_path(stem),
            format!("{} tile_ids for {} tiles", header.tile_ids.len(), header.n_tiles),
        ));
    }
    let data = read_payload(stem, header.n_tiles * header.dim)?;
    Ok(FeatureMatrix::new(header.dim, data, header.tile_ids)?)
}

/// Read the per-slide mpp stored in a features header.
pub fn read_features_mpp(stem: &Path) -> Result<(f64, f64)> {
    let header: FeaturesHeader = read_header(stem)?;
    Ok((header.mpp_x, header.mpp_y))
}

/// Write a tile-features container (canonical form).
pub fn write_features(stem: &Path, matrix: &FeatureMatrix, mpp: (f64, f64)) -> Result<()> {
    let header = FeaturesHeader {
        schema: FEATURES_SCHEMA.into(),
        n_tiles: matrix.n_tiles(),
        dim: matrix.dim(),
        dtype: DTYPE.into(),
        tile_ids: matrix.tile_ids().to_vec(),
        mpp_x: mpp.0,
        mpp_y: mpp.1,
    };
    write_header(stem, &header)?;
    write_payload(stem, matrix.data())
}

/// Read a patch-embedding grid container; returns the grid and its header.
pub fn read_patch_grid(stem: &Path) -> Result<(PatchGrid, PatchGridHeader)> {
    let header: PatchGridHeader = read_header(stem)?;
    if header.schema != PATCH_GRID_SCHEMA {
        return Err(ImiliaError::format(
            json_path(stem),
            format!("schema {:?}, want {PATCH_GRID_SCHEMA:?}", header.schema),
        ));
    }
    if header.dtype != DTYPE {
        return Err(ImiliaError::format(json_path(stem), format!("dtype {:?}", header.dtype)));
    }
    let data = read_payload(stem, header.rows * header.cols * header.dim)?;
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(ImiliaError::format(
            bin_path(stem),
            format!("non-finite value at offset {pos}"),
        ));
    }
    let grid = PatchGrid::new(header.rows, header.cols, header.dim, data)
        .ok_or_else(|| ImiliaError::format(json_path(stem), "inconsistent grid dims"))?;
    Ok((grid, header))
}

/// Write a patch-embedding grid container.
pub fn write_patch_grid(stem: &Path, grid: &PatchGrid, header: &PatchGridHeader) -> Result<()> {
    write_header(stem, header)?;
    write_payload(stem, &grid.data)
}

pub fn patch_grid_header(grid: &PatchGrid) -> PatchGridHeader {
    PatchGridHeader {
        schema: PATCH_GRID_SCHEMA.into(),
        rows: grid.rows,
        cols: grid.cols,
        dim: grid.dim,
        dtype: DTYPE.into(),
        tile_id: None,
        slide_id: None,
        origin_row: None,
        origin_col: None,
    }
}
