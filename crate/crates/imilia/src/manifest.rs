//! Dataset manifest: one CSV row per slide.
//!
//! Header: `slide_id,cohort,label,mpp_x,mpp_y,tile_manifest,feature_path`.
//! An empty label field marks an unlabeled slide. Relative paths resolve
//! against the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use imilia_core::{Bag, FeatureMatrix};
use rayon::prelude::*;

use crate::container;
use crate::error::{ImiliaError, Result};

pub const MANIFEST_HEADER: [&str; 7] =
    ["slide_id", "cohort", "label", "mpp_x", "mpp_y", "tile_manifest", "feature_path"];

/// One slide's identity and artifact locations.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideRecord {
    pub slide_id: String,
    pub cohort: String,
    pub label: Option<u8>,
    pub mpp_x: f64,
    pub mpp_y: f64,
    pub tile_manifest: PathBuf,
    pub feature_path: PathBuf,
}

/// Load and validate the dataset manifest.
///
/// Rejects duplicate slide ids, non-positive mpp and rows whose feature
/// container is missing or has an unparsable header.
pub fn load_dataset(path: &Path) -> Result<Vec<SlideRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => ImiliaError::io(path, std::io::Error::other(e.to_string())),
        _ => ImiliaError::format(path, e.to_string()),
    })?;
    let headers = reader.headers().map_err(|e| ImiliaError::format(path, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != MANIFEST_HEADER {
        return Err(ImiliaError::format(
            path,
            format!("unexpected header {got:?}, want {MANIFEST_HEADER:?}"),
        ));
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| ImiliaError::format(path, e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let slide_id = field(0);
        if slide_id.is_empty() {
            return Err(ImiliaError::format(path, format!("row {}: empty slide_id", line + 2)));
        }
        if !seen.insert(slide_id.clone()) {
            return Err(ImiliaError::DuplicateSlide { path: path.into(), slide_id });
        }
        let label = match field(2).as_str() {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => {
                return Err(ImiliaError::format(
                    path,
                    format!("slide {slide_id:?}: label must be empty, 0 or 1, got {other:?}"),
                ))
            }
        };
        let parse_mpp = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| ImiliaError::format(path, format!("slide {slide_id:?}: bad mpp {s:?}")))
        };
        let mpp_x = parse_mpp(&field(3))?;
        let mpp_y = parse_mpp(&field(4))?;
        if !(mpp_x > 0.0) || !(mpp_y > 0.0) {
            return Err(ImiliaError::NonPositiveMpp { slide_id });
        }
        let resolve = |p: String| -> PathBuf {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base.join(pb)
            }
        };
        records.push(SlideRecord {
            slide_id,
            cohort: field(1),
            label,
            mpp_x,
            mpp_y,
            tile_manifest: resolve(field(5)),
            feature_path: resolve(field(6)),
        });
    }

    // Feature containers must at least exist with a readable header.
    for r in &records {
        container::peek_features(&r.feature_path).map_err(|e| ImiliaError::UnreadableFeatures {
            slide_id: r.slide_id.clone(),
            path: r.feature_path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(records)
}

/// Write a manifest; paths are stored as given.
pub fn write_manifest(path: &Path, records: &[SlideRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| ImiliaError::format(path, e.to_string()))?;
    writer
        .write_record(MANIFEST_HEADER)
        .map_err(|e| ImiliaError::format(path, e.to_string()))?;
    for r in records {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        writer
            .write_record([
                r.slide_id.as_str(),
                r.cohort.as_str(),
                &label,
                &r.mpp_x.to_string(),
                &r.mpp_y.to_string(),
                &r.tile_manifest.to_string_lossy(),
                &r.feature_path.to_string_lossy(),
            ])
            .map_err(|e| ImiliaError::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| ImiliaError::io(path, e))?;
    Ok(())
}

/// Load the feature matrix referenced by one record.
pub fn load_features(record: &SlideRecord) -> Result<FeatureMatrix> {
    container::read_features(&record.feature_path)
}

/// Load every slide's features into memory (parallel across files) and pair
/// them with labels as in-memory bags, in manifest order.
pub fn load_bags(records: &[SlideRecord]) -> Result<Vec<Bag>> {
    records
        .par_iter()
        .map(|r| {
            let features = load_features(r)?;
            Ok(Bag { slide_id: r.slide_id.clone(), label: r.label, features })
        })
        .collect()
}
