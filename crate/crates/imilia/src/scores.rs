//! CSV tables flowing between pipeline stages: tile scores, slide
//! predictions, extreme-tile lists, tile manifests and feature rows.

use std::path::Path;
use std::str::FromStr;

use imilia_core::chowder::{ExtremeTile, ModelId, ScoreRow, Side};
use imilia_core::interpret::TileFeatureRow;
use imilia_core::preprocess::TileGrid;

use crate::error::{ImiliaError, Result};

fn open_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| ImiliaError::io(parent, e))?;
        }
    }
    csv::Writer::from_path(path).map_err(|e| ImiliaError::format(path, e.to_string()))
}

fn open_reader(path: &Path, expected_header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| ImiliaError::format(path, e.to_string()))?;
    let got: Vec<String> = reader
        .headers()
        .map_err(|e| ImiliaError::format(path, e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if got != expected_header {
        return Err(ImiliaError::format(
            path,
            format!("unexpected header {got:?}, want {expected_header:?}"),
        ));
    }
    Ok(reader)
}

macro_rules! wrec {
    ($writer:expr, $path:expr, [$($field:expr),+ $(,)?]) => {
        $writer
            .write_record([$($field),+])
            .map_err(|e| ImiliaError::format($path, e.to_string()))?
    };
}

pub const SCORES_HEADER: [&str; 5] = ["slide_id", "tile_id", "channel", "model_id", "score"];

/// Stream score rows to `slide_id,tile_id,channel,model_id,score`.
pub fn write_score_table(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut writer = open_writer(path)?;
    wrec!(writer, path, [SCORES_HEADER[0], SCORES_HEADER[1], SCORES_HEADER[2], SCORES_HEADER[3], SCORES_HEADER[4]]);
    for r in rows {
        wrec!(
            writer,
            path,
            [
                r.slide_id.as_str(),
                r.tile_id.as_str(),
                &r.channel.to_string(),
                &r.model.to_string(),
                &r.score.to_string(),
            ]
        );
    }
    writer.flush().map_err(|e| ImiliaError::io(path, e))?;
    Ok(())
}

pub fn read_score_table(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut reader = open_reader(path, &SCORES_HEADER)?;
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| ImiliaError::format(path, e.to_string()))?;
        let get = |i: usize| row.get(i).unwrap_or("").to_string();
        let model = match get(3).as_str() {
            "ensemble" => ModelId::Ensemble,
            text => ModelId::Fold(
                text.parse::<usize>()
                    .map_err(|_| ImiliaError::format(path, format!("bad model_id {text:?}")))?,
            ),
        };
        rows.push(ScoreRow {
            slide_id: get(0),
            tile_id: get(1),
            channel: get(2)
                .parse()
                .map_err(|_| ImiliaError::format(path, format!("bad channel {:?}", get(2))))?,
            model,
            score: get(4)
                .parse()
                .map_err(|_| ImiliaError::format(path, format!("bad score {:?}", get(4))))?,
        });
    }
    Ok(rows)
}

/// One slide's ensembled probability with an optional known label.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub slide_id: String,
    pub probability: f64,
    pub label: Option<u8>,
}

pub const PREDICTIONS_HEADER: [&str; 3] = ["slide_id", "probability", "label"];

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut writer = open_writer(path)?;
    wrec!(writer, path, [PREDICTIONS_HEADER[0], PREDICTIONS_HEADER[1], PREDICTIONS_HEADER[2]]);
    for r in rows {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        wrec!(writer, path, [r.slide_id.as_str(), &r.probability.to_string(), &label]);
    }
    writer.flush().map_err(|e| ImiliaError::io(path, e))?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut reader = open_reader(path, &PREDICTIONS_HEADER)?;
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| ImiliaError::format(path, e.to_string()))?;
        let label = match row.get(2).unwrap_or("") {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => {
                return Err(ImiliaError::format(path, format!("bad label {other:?}")));
            }
        };
        rows.push(PredictionRow {
            slide_id: row.get(0).unwrap_or("").to_string(),
            probability: row
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| ImiliaError::format(path, "bad probability"))?,
            label,
        });
    }
    Ok(rows)
}

pub const EXTREMES_HEADER: [&str; 4] = ["slide_id", "tile_id", "score", "side"];

/// An extreme tile annotated with its side.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremeRow {
    pub slide_id: String,
    pub tile_id: String,
    pub score: f64,
    pub side: Side,
}

pub fn write_extremes(path: &Path, per_side: &[(Side, Vec<ExtremeTile>)]) -> Result<()> {
    let mut writer = open_writer(path)?;
    wrec!(writer, path, [EXTREMES_HEADER[0], EXTREMES_HEADER[1], EXTREMES_HEADER[2], EXTREMES_HEADER[3]]);
    for (side, tiles) in per_side {
        for t in tiles {
            wrec!(
                writer,
                path,
                [t.slide_id.as_str(), t.tile_id.as_str(), &t.score.to_string(), &side.to_string()]
            );
        }
    }
    writer.flush().map_err(|e| ImiliaError::io(path, e))?;
    Ok(())
}

pub fn read_extremes(path: &Path) -> Result<Vec<ExtremeRow>> {
    let mut reader = open_reader(path, &EXTREMES_HEADER)?;
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| ImiliaError::format(path, e.to_string()))?;
        let side_text = row.get(3).unwrap_or("");
        let side = Side::from_str(side_text)
            .map_err(|_| ImiliaError::format(path, format!("bad side {side_text:?}")))?;
        rows.push(ExtremeRow {
            slide_id: row.get(0).unwrap_or("").to_string(),
            tile_id: row.get(1).unwrap_or("").to_string(),
            score: row
                .get(2)
                .unwrap_or("")
                .parse()
                .map_err(|_| ImiliaError::format(path, "bad score"))?,
            side,
        });
    }
    Ok(rows)
}

pub const TILE_MANIFEST_HEADER: [&str; 5] = ["tile_id", "x_px", "y_px", "tile_size_px", "mpp"];

/// Write a tile grid as `tile_id,x_px,y_px,tile_size_px,mpp`.
pub fn write_tile_manifest(path: &Path, grid: &TileGrid) -> Result<()> {
    let mut writer = open_writer(path)?;
    wrec!(writer, path, [TILE_MANIFEST_HEADER[0], TILE_MANIFEST_HEADER[1], TILE_MANIFEST_HEADER[2], TILE_MANIFEST_HEADER[3], TILE_MANIFEST_HEADER[4]]);
    for t in &grid.tiles {
        wrec!(
            writer,
            path,
            [
                t.tile_id.as_str(),
                &t.x_px.to_string(),
                &t.y_px.to_string(),
                &grid.tile_size_px.to_string(),
                &grid.mpp.to_string(),
            ]
        );
    }
    writer.flush().map_err(|e| ImiliaError::io(path, e))?;
    Ok(())
}

pub const FEATURES_HEADER: [&str; 19] = [
    "slide_id",
    "tile_id",
    "side",
    "cohort",
    "n_epithelial",
    "n_lymphocyte",
    "n_plasmocyte",
    "n_eosinophil",
    "n_neutrophil",
    "n_endothelial",
    "n_fibroblast",
    "n_other",
    "epithelium_area_um2",
    "empty_epithelium",
    "rho_epithelial",
    "rho_lymphocyte",
    "rho_plasmocyte",
    "rho_eosinophil",
    "rho_neutrophil",
];

/// Write per-tile interpretable feature rows with their cohort.
pub fn write_feature_rows(path: &Path, rows: &[(String, TileFeatureRow)]) -> Result<()> {
    let mut writer = open_writer(path)?;
    writer
        .write_record(FEATURES_HEADER)
        .map_err(|e| ImiliaError::format(path, e.to_string()))?;
    for (cohort, r) in rows {
        let mut record: Vec<String> = vec![
            r.slide_id.clone(),
            r.tile_id.clone(),
            r.side.to_string(),
            cohort.clone(),
        ];
        for c in r.counts {
            record.push(c.to_string());
        }
        record.push(r.other_count.to_string());
        record.push(r.epithelium_area_um2.to_string());
        record.push(u8::from(r.empty_epithelium).to_string());
        for d in r.densities {
            record.push(d.to_string());
        }
        writer.write_record(&record).map_err(|e| ImiliaError::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| ImiliaError::io(path, e))?;
    Ok(())
}

/// Read feature rows back as `(cohort, row)` pairs.
pub fn read_feature_rows(path: &Path) -> Result<Vec<(String, TileFeatureRow)>> {
    let mut reader = open_reader(path, &FEATURES_HEADER)?;
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| ImiliaError::format(path, e.to_string()))?;
        let get = |i: usize| row.get(i).unwrap_or("").to_string();
        let side = Side::from_str(&get(2))
            .map_err(|_| ImiliaError::format(path, format!("bad side {:?}", get(2))))?;
        let parse_usize = |i: usize| -> Result<usize> {
            get(i).parse().map_err(|_| ImiliaError::format(path, format!("bad count {:?}", get(i))))
        };
        let parse_f64 = |i: usize| -> Result<f64> {
            get(i).parse().map_err(|_| ImiliaError::format(path, format!("bad value {:?}", get(i))))
        };
        let mut counts = [0usize; 7];
        for (k, slot) in counts.iter_mut().enumerate() {
            *slot = parse_usize(4 + k)?;
        }
        let mut densities = [0.0f64; 5];
        for (k, slot) in densities.iter_mut().enumerate() {
            *slot = parse_f64(14 + k)?;
        }
        rows.push((
            get(3),
            TileFeatureRow {
                slide_id: get(0),
                tile_id: get(1),
                side,
                counts,
                other_count: parse_usize(11)?,
                epithelium_area_um2: parse_f64(12)?,
                empty_epithelium: get(13) == "1",
                densities,
            },
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_table_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        let rows = vec![
            ScoreRow {
                slide_id: "s1".into(),
                tile_id: "t1".into(),
                channel: 0,
                model: ModelId::Fold(2),
                score: -0.125,
            },
            ScoreRow {
                slide_id: "s1".into(),
                tile_id: "t1".into(),
                channel: 1,
                model: ModelId::Ensemble,
                score: 0.5,
            },
        ];
        write_score_table(&p, &rows).unwrap();
        assert_eq!(read_score_table(&p).unwrap(), rows);
    }

    #[test]
    fn predictions_roundtrip_with_missing_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("preds.csv");
        let rows = vec![
            PredictionRow { slide_id: "a".into(), probability: 0.75, label: Some(1) },
            PredictionRow { slide_id: "b".into(), probability: 0.25, label: None },
        ];
        write_predictions(&p, &rows).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), rows);
    }

    #[test]
    fn extremes_roundtrip_both_sides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("extremes.csv");
        let maxes = vec![ExtremeTile { slide_id: "s".into(), tile_id: "t9".into(), score: 3.0 }];
        let mins = vec![ExtremeTile { slide_id: "s".into(), tile_id: "t0".into(), score: -2.0 }];
        write_extremes(&p, &[(Side::Max, maxes), (Side::Min, mins)]).unwrap();
        let rows = read_extremes(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].side, Side::Max);
        assert_eq!(rows[1].side, Side::Min);
        assert_eq!(rows[1].score, -2.0);
    }

    #[test]
    fn feature_rows_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("features.csv");
        let row = TileFeatureRow {
            slide_id: "s".into(),
            tile_id: "t".into(),
            side: Side::Max,
            counts: [5, 4, 3, 2, 1, 0, 7],
            other_count: 2,
            epithelium_area_um2: 123.5,
            empty_epithelium: false,
            densities: [0.1, 0.2, 0.0, 0.3, 0.004],
        };
        write_feature_rows(&p, &[("cohortX".into(), row.clone())]).unwrap();
        let loaded = read_feature_rows(&p).unwrap();
        assert_eq!(loaded, vec![("cohortX".into(), row)]);
    }
}
