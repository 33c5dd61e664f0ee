//! Interpretable per-tile features: cell-class counts and in-epithelium
//! densities.
//!
//! The density of class `c` is the number of class-`c` centroids landing on
//! epithelium pixels divided by the epithelium area in square micrometers
//! (mask-one pixel count times `mpp_x * mpp_y`). An empty epithelium yields
//! density 0 with a flag rather than a NaN, so downstream aggregation stays
//! total.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::chowder::Side;
use crate::mask::BinMask;
use crate::metrics;

/// Cell classes analyzed by the pipeline. The source detector supports more;
/// anything outside this set is carried as `Other` and excluded from
/// densities.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellClass {
    Epithelial,
    Lymphocyte,
    Plasmocyte,
    Eosinophil,
    Neutrophil,
    Endothelial,
    Fibroblast,
    Cancer,
    Other(String),
}

impl CellClass {
    /// Parse a class name; unknown non-empty names map to `Other`.
    pub fn parse(name: &str) -> Option<CellClass> {
        let trimmed = name.trim();
        if trimmed.is_empty() {
            return None;
        }
        Some(match trimmed {
            "epithelial" => CellClass::Epithelial,
            "lymphocyte" => CellClass::Lymphocyte,
            "plasmocyte" => CellClass::Plasmocyte,
            "eosinophil" => CellClass::Eosinophil,
            "neutrophil" => CellClass::Neutrophil,
            "endothelial" => CellClass::Endothelial,
            "fibroblast" => CellClass::Fibroblast,
            "cancer" => CellClass::Cancer,
            other => CellClass::Other(other.to_string()),
        })
    }

    pub fn name(&self) -> &str {
        match self {
            CellClass::Epithelial => "epithelial",
            CellClass::Lymphocyte => "lymphocyte",
            CellClass::Plasmocyte => "plasmocyte",
            CellClass::Eosinophil => "eosinophil",
            CellClass::Neutrophil => "neutrophil",
            CellClass::Endothelial => "endothelial",
            CellClass::Fibroblast => "fibroblast",
            CellClass::Cancer => "cancer",
            CellClass::Other(name) => name,
        }
    }

    /// The immune classes whose epithelium densities the reports track.
    pub fn immune() -> [CellClass; 4] {
        [
            CellClass::Lymphocyte,
            CellClass::Plasmocyte,
            CellClass::Eosinophil,
            CellClass::Neutrophil,
        ]
    }

    /// Classes with a dedicated count column (everything else is `other`).
    pub fn named() -> [CellClass; 7] {
        [
            CellClass::Epithelial,
            CellClass::Lymphocyte,
            CellClass::Plasmocyte,
            CellClass::Eosinophil,
            CellClass::Neutrophil,
            CellClass::Endothelial,
            CellClass::Fibroblast,
        ]
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// One detected cell in tile pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CellInstance {
    pub cell_id: String,
    pub class: CellClass,
    pub centroid: (f64, f64),
    /// Closed polygon; the renderer uses even-odd fill, self-intersection is
    /// tolerated.
    pub polygon: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellError {
    PolygonTooShort { cell_id: String, vertices: usize },
    CentroidOutsideBounds { cell_id: String },
    CentroidOutsidePolygonBox { cell_id: String },
    EmptyClass { cell_id: String },
}

impl fmt::Display for CellError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellError::PolygonTooShort { cell_id, vertices } => {
                write!(f, "cell {cell_id:?}: polygon has {vertices} vertices, need >= 3")
            }
            CellError::CentroidOutsideBounds { cell_id } => {
                write!(f, "cell {cell_id:?}: centroid outside tile bounds")
            }
            CellError::CentroidOutsidePolygonBox { cell_id } => {
                write!(f, "cell {cell_id:?}: centroid outside polygon bounding box")
            }
            CellError::EmptyClass { cell_id } => {
                write!(f, "cell {cell_id:?}: empty class label")
            }
        }
    }
}

impl core::error::Error for CellError {}

impl CellInstance {
    /// Validate the structural invariants; `tile_size_px`, when known, bounds
    /// the centroid.
    pub fn validate(&self, tile_size_px: Option<f64>) -> Result<(), CellError> {
        if self.polygon.len() < 3 {
            return Err(CellError::PolygonTooShort {
                cell_id: self.cell_id.clone(),
                vertices: self.polygon.len(),
            });
        }
        let (cx, cy) = self.centroid;
        let min_x = self.polygon.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = self.polygon.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = self.polygon.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = self.polygon.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if cx < min_x || cx > max_x || cy < min_y || cy > max_y {
            return Err(CellError::CentroidOutsidePolygonBox { cell_id: self.cell_id.clone() });
        }
        if let Some(size) = tile_size_px {
            if cx < 0.0 || cy < 0.0 || cx >= size || cy >= size {
                return Err(CellError::CentroidOutsideBounds { cell_id: self.cell_id.clone() });
            }
        }
        Ok(())
    }
}

/// Remap every cancer prediction to the epithelial class; idempotent and
/// count-preserving.
pub fn remap_cancer(cells: &mut [CellInstance]) {
    for cell in cells {
        if cell.class == CellClass::Cancer {
            cell.class = CellClass::Epithelial;
        }
    }
}

/// Density outcome: value in cells per square micrometer, with the
/// empty-epithelium convention flagged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Density {
    pub value: f64,
    pub empty_epithelium: bool,
}

/// In-epithelium density of one class.
///
/// A centroid is inside the epithelium when the mask is one at its containing
/// pixel (coordinate floor); centroids outside the mask extent count as
/// outside. Area is `count_ones * mpp_x * mpp_y`.
pub fn density(
    cells: &[CellInstance],
    epithelium: &BinMask,
    mpp: (f64, f64),
    class: &CellClass,
) -> Density {
    debug_assert!(mpp.0 > 0.0 && mpp.1 > 0.0);
    let area_px = epithelium.count_ones();
    if area_px == 0 {
        return Density { value: 0.0, empty_epithelium: true };
    }
    let mut inside = 0usize;
    for cell in cells {
        if &cell.class != class {
            continue;
        }
        let x = libm::floor(cell.centroid.0);
        let y = libm::floor(cell.centroid.1);
        if x < 0.0 || y < 0.0 {
            continue;
        }
        let (x, y) = (x as usize, y as usize);
        if x < epithelium.width() && y < epithelium.height() && epithelium.get(x, y) == 1 {
            inside += 1;
        }
    }
    let area_um2 = area_px as f64 * mpp.0 * mpp.1;
    Density { value: inside as f64 / area_um2, empty_epithelium: false }
}

/// Per-tile interpretable features: class counts plus in-epithelium
/// densities for the epithelial and immune classes.
#[derive(Clone, Debug, PartialEq)]
pub struct TileFeatureRow {
    pub slide_id: String,
    pub tile_id: String,
    pub side: Side,
    /// Counts aligned with [`CellClass::named`], then the `other` bucket.
    pub counts: [usize; 7],
    pub other_count: usize,
    pub epithelium_area_um2: f64,
    pub empty_epithelium: bool,
    /// Densities aligned with [epithelial, lymphocyte, plasmocyte,
    /// eosinophil, neutrophil].
    pub densities: [f64; 5],
}

/// Compute one tile's feature row. Cancer cells are remapped to epithelial
/// first (idempotent), so counts never include a cancer bucket.
pub fn tile_features(
    slide_id: &str,
    tile_id: &str,
    side: Side,
    cells: &[CellInstance],
    epithelium: &BinMask,
    mpp: (f64, f64),
) -> TileFeatureRow {
    let mut remapped: Vec<CellInstance> = cells.to_vec();
    remap_cancer(&mut remapped);

    let named = CellClass::named();
    let mut counts = [0usize; 7];
    let mut other_count = 0usize;
    for cell in &remapped {
        match named.iter().position(|c| c == &cell.class) {
            Some(i) => counts[i] += 1,
            None => other_count += 1,
        }
    }

    let density_classes = [
        CellClass::Epithelial,
        CellClass::Lymphocyte,
        CellClass::Plasmocyte,
        CellClass::Eosinophil,
        CellClass::Neutrophil,
    ];
    let mut densities = [0.0f64; 5];
    let mut empty = false;
    for (slot, class) in density_classes.iter().enumerate() {
        let d = density(&remapped, epithelium, mpp, class);
        densities[slot] = d.value;
        empty = d.empty_epithelium;
    }
    TileFeatureRow {
        slide_id: slide_id.to_string(),
        tile_id: tile_id.to_string(),
        side,
        counts,
        other_count,
        epithelium_area_um2: epithelium.count_ones() as f64 * mpp.0 * mpp.1,
        empty_epithelium: empty,
        densities,
    }
}

/// Pearson agreement between per-tile epithelial cell counts and epithelium
/// areas.
pub fn epithelium_agreement(
    counts: &[f64],
    areas: &[f64],
) -> Result<(f64, f64), metrics::MetricsError> {
    metrics::pearson(counts, areas)
}
