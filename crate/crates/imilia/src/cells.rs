//! Cell-prediction ingestion.
//!
//! The native format is JSON lines, one cell per line:
//! `{"tile_id":..., "cell_id":..., "class":..., "centroid":[x,y],
//! "polygon":[[x,y],...]}`. For evaluation a flat CSV with columns
//! `tile_id,cell_id,class,polygon` is also accepted, the polygon encoded as
//! `"x y;x y;..."`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use imilia_core::interpret::{CellClass, CellInstance};
use serde::{Deserialize, Serialize};

use crate::error::{ImiliaError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CellRecord {
    tile_id: String,
    cell_id: String,
    class: String,
    centroid: [f64; 2],
    polygon: Vec<[f64; 2]>,
}

/// Cells of one file grouped per tile, in input order within each tile.
pub type CellsByTile = BTreeMap<String, Vec<CellInstance>>;

/// Load a JSONL cell file; every instance is validated (`tile_size_px`
/// bounds the centroid when given).
pub fn load_cells(path: &Path, tile_size_px: Option<f64>) -> Result<CellsByTile> {
    let text = fs::read_to_string(path).map_err(|e| ImiliaError::io(path, e))?;
    let mut by_tile: CellsByTile = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CellRecord = serde_json::from_str(line)
            .map_err(|e| ImiliaError::format(path, format!("line {}: {e}", lineno + 1)))?;
        let class = CellClass::parse(&record.class).ok_or_else(|| {
            ImiliaError::format(
                path,
                format!("line {}: cell {:?}: empty class", lineno + 1, record.cell_id),
            )
        })?;
        let cell = CellInstance {
            cell_id: record.cell_id,
            class,
            centroid: (record.centroid[0], record.centroid[1]),
            polygon: record.polygon.into_iter().map(|p| (p[0], p[1])).collect(),
        };
        cell.validate(tile_size_px)?;
        by_tile.entry(record.tile_id).or_default().push(cell);
    }
    Ok(by_tile)
}

/// Write cells back out as JSONL (used by tests and fixtures).
pub fn write_cells(path: &Path, by_tile: &CellsByTile) -> Result<()> {
    let mut out = String::new();
    for (tile_id, cells) in by_tile {
        for cell in cells {
            let record = CellRecord {
                tile_id: tile_id.clone(),
                cell_id: cell.cell_id.clone(),
                class: cell.class.name().to_string(),
                centroid: [cell.centroid.0, cell.centroid.1],
                polygon: cell.polygon.iter().map(|&(x, y)| [x, y]).collect(),
            };
            out.push_str(&serde_json::to_string(&record).expect("cell serializes"));
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| ImiliaError::io(path, e))
}

/// A flat instance row for evaluation (predictions or ground truth).
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceRow {
    pub tile_id: String,
    pub cell_id: String,
    pub class: CellClass,
    pub polygon: Vec<(f64, f64)>,
}

/// Read the flat CSV instance format used by `imilia eval --metric f1|pq`.
pub fn read_instance_csv(path: &Path) -> Result<Vec<InstanceRow>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| ImiliaError::format(path, e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ImiliaError::format(path, e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if headers != ["tile_id", "cell_id", "class", "polygon"] {
        return Err(ImiliaError::format(
            path,
            format!("unexpected header {headers:?}, want [tile_id, cell_id, class, polygon]"),
        ));
    }
    let mut rows = Vec::new();
    for (lineno, row) in reader.records().enumerate() {
        let row = row.map_err(|e| ImiliaError::format(path, e.to_string()))?;
        let cell_id = row.get(1).unwrap_or("").to_string();
        let class = CellClass::parse(row.get(2).unwrap_or("")).ok_or_else(|| {
            ImiliaError::format(path, format!("line {}: empty class", lineno + 2))
        })?;
        let polygon = parse_polygon(row.get(3).unwrap_or("")).map_err(|msg| {
            ImiliaError::format(path, format!("line {}: cell {cell_id:?}: {msg}", lineno + 2))
        })?;
        rows.push(InstanceRow {
            tile_id: row.get(0).unwrap_or("").to_string(),
            cell_id,
            class,
            polygon,
        });
    }
    Ok(rows)
}

/// Parse `"x y;x y;..."` into vertices.
pub fn parse_polygon(text: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    let mut vertices = Vec::new();
    for part in text.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let mut it = part.split_whitespace();
        let x = it
            .next()
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| format!("bad vertex {part:?}"))?;
        let y = it
            .next()
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| format!("bad vertex {part:?}"))?;
        vertices.push((x, y));
    }
    if vertices.len() < 3 {
        return Err(format!("polygon has {} vertices, need >= 3", vertices.len()));
    }
    Ok(vertices)
}

pub fn format_polygon(polygon: &[(f64, f64)]) -> String {
    polygon
        .iter()
        .map(|(x, y)| format!("{x} {y}"))
        .collect::<Vec<_>>()
        .join(";")
}
