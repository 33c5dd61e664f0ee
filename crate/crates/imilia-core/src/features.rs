//! Tile-embedding matrices and the in-memory slide bags built from them.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Embedding dimension of the patch/tile representations the epithelium
/// classifier is trained against.
pub const EMBED_DIM: usize = 768;

/// Per-slide tile-embedding matrix: `n_tiles` rows of `dim` floats, row-major,
/// with tile identifiers aligned to rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n_tiles: usize,
    dim: usize,
    data: Vec<f32>,
    tile_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureError {
    /// No tiles at all.
    Empty,
    /// Payload length is not `n_tiles * dim`.
    SizeMismatch { expected: usize, actual: usize },
    /// Row count and tile-id count disagree.
    TileIdCount { n_tiles: usize, n_ids: usize },
    /// NaN or infinity in the payload; reports the first offending row.
    NonFinite { row: usize },
}

impl fmt::Display for FeatureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureError::Empty => write!(f, "feature matrix has no tiles"),
            FeatureError::SizeMismatch { expected, actual } => {
                write!(f, "feature payload holds {actual} values, header implies {expected}")
            }
            FeatureError::TileIdCount { n_tiles, n_ids } => {
                write!(f, "{n_tiles} tiles but {n_ids} tile ids")
            }
            FeatureError::NonFinite { row } => {
                write!(f, "non-finite embedding value in tile row {row}")
            }
        }
    }
}

impl core::error::Error for FeatureError {}

impl FeatureMatrix {
    /// Build and validate a matrix. `data` is row-major with `dim` columns.
    pub fn new(dim: usize, data: Vec<f32>, tile_ids: Vec<String>) -> Result<Self, FeatureError> {
        if dim == 0 || data.is_empty() {
            return Err(FeatureError::Empty);
        }
        if data.len() % dim != 0 {
            return Err(FeatureError::SizeMismatch {
                expected: (data.len() / dim + 1) * dim,
                actual: data.len(),
            });
        }
        let n_tiles = data.len() / dim;
        if tile_ids.len() != n_tiles {
            return Err(FeatureError::TileIdCount { n_tiles, n_ids: tile_ids.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { row: pos / dim });
        }
        Ok(Self { n_tiles, dim, data, tile_ids })
    }

    pub fn n_tiles(&self) -> usize {
        self.n_tiles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tile_id(&self, i: usize) -> &str {
        &self.tile_ids[i]
    }

    pub fn tile_ids(&self) -> &[String] {
        &self.tile_ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Matrix restricted to the given rows (used for per-epoch tile subsampling).
    pub fn subset(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            ids.push(self.tile_ids[r].clone());
        }
        FeatureMatrix { n_tiles: rows.len(), dim: self.dim, data, tile_ids: ids }
    }
}

/// One slide held in memory: identity, optional binary label, embeddings.
#[derive(Clone, Debug)]
pub struct Bag {
    pub slide_id: String,
    pub label: Option<u8>,
    pub features: FeatureMatrix,
}
