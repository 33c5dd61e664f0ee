//! Report assembly: composition statistics, violin figures, the PR curve and
//! the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use imilia_core::interpret::TileFeatureRow;
use imilia_core::metrics;
use imilia_core::summary::{composition_values, Measure};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{ImiliaError, Result};
use crate::scores::PredictionRow;
use crate::svg::{self, ViolinGroup};

pub const COMPOSITION_HEADER: [&str; 9] =
    ["cohort", "side", "class", "measure", "n", "mean", "median", "q1", "q3"];

/// Write grouped composition statistics as CSV.
pub fn write_composition(path: &Path, rows: &[(String, TileFeatureRow)]) -> Result<()> {
    let table = imilia_core::summary::composition_table(rows);
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| ImiliaError::format(path, e.to_string()))?;
    writer
        .write_record(COMPOSITION_HEADER)
        .map_err(|e| ImiliaError::format(path, e.to_string()))?;
    for ((cohort, side, class, measure), stats) in &table {
        writer
            .write_record([
                cohort.as_str(),
                &side.to_string(),
                class.as_str(),
                measure.name(),
                &stats.n.to_string(),
                &stats.mean.to_string(),
                &stats.median.to_string(),
                &stats.q1.to_string(),
                &stats.q3.to_string(),
            ])
            .map_err(|e| ImiliaError::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| ImiliaError::io(path, e))?;
    Ok(())
}

/// Build violin panels (one per cohort) for one measure. Group labels are
/// `class (side)`.
fn violin_panels(
    rows: &[(String, TileFeatureRow)],
    measure: Measure,
) -> Vec<(String, Vec<ViolinGroup>)> {
    let grouped = composition_values(rows);
    let mut panels: Vec<(String, Vec<ViolinGroup>)> = Vec::new();
    for ((cohort, side, class, m), values) in grouped {
        if m != measure {
            continue;
        }
        let label = format!("{class} ({side})");
        match panels.iter_mut().find(|(c, _)| *c == cohort) {
            Some((_, groups)) => groups.push(ViolinGroup { label, values }),
            None => panels.push((cohort, vec![ViolinGroup { label, values }])),
        }
    }
    panels
}

/// Everything `imilia report` produces.
#[derive(Debug, Default)]
pub struct ReportOutputs {
    pub written: Vec<PathBuf>,
    pub notes: Vec<String>,
}

/// Assemble the report directory from feature rows and slide predictions.
/// Either input may be absent; the report degrades gracefully.
pub fn assemble(
    out_dir: &Path,
    features: Option<&[(String, TileFeatureRow)]>,
    predictions: Option<&[PredictionRow]>,
) -> Result<ReportOutputs> {
    fs::create_dir_all(out_dir).map_err(|e| ImiliaError::io(out_dir, e))?;
    let mut outputs = ReportOutputs::default();

    match features {
        Some(rows) if !rows.is_empty() => {
            let composition = out_dir.join("composition.csv");
            write_composition(&composition, rows)?;
            outputs.written.push(composition);

            for (measure, name, title) in [
                (Measure::Count, "violin_counts.svg", "cell counts in extreme tiles"),
                (Measure::Density, "violin_density.svg", "in-epithelium densities in extreme tiles"),
            ] {
                let panels = violin_panels(rows, measure);
                let svg_text = svg::render_violin_svg(title, &panels);
                let path = out_dir.join(name);
                fs::write(&path, svg_text).map_err(|e| ImiliaError::io(&path, e))?;
                outputs.written.push(path);
            }
        }
        _ => outputs.notes.push("no tile features: composition and violins skipped".into()),
    }

    match predictions {
        Some(rows) => {
            let labeled: Vec<&PredictionRow> =
                rows.iter().filter(|r| r.label.is_some()).collect();
            let scores: Vec<f64> = labeled.iter().map(|r| r.probability).collect();
            let labels: Vec<u8> = labeled.iter().map(|r| r.label.unwrap()).collect();
            match (
                metrics::pr_curve(&scores, &labels),
                metrics::average_precision(&scores, &labels),
            ) {
                (Ok(points), Ok(ap)) => {
                    let svg_path = out_dir.join("pr_curve.svg");
                    fs::write(&svg_path, svg::render_pr_curve_svg(&points, ap))
                        .map_err(|e| ImiliaError::io(&svg_path, e))?;
                    outputs.written.push(svg_path);

                    let csv_path = out_dir.join("pr_curve.csv");
                    let mut writer = csv::Writer::from_path(&csv_path)
                        .map_err(|e| ImiliaError::format(&csv_path, e.to_string()))?;
                    writer
                        .write_record(["recall", "precision"])
                        .map_err(|e| ImiliaError::format(&csv_path, e.to_string()))?;
                    for (recall, precision) in &points {
                        writer
                            .write_record([recall.to_string(), precision.to_string()])
                            .map_err(|e| ImiliaError::format(&csv_path, e.to_string()))?;
                    }
                    writer.flush().map_err(|e| ImiliaError::io(&csv_path, e))?;
                    outputs.written.push(csv_path);
                }
                _ => outputs
                    .notes
                    .push("predictions lack both classes: PR curve skipped".into()),
            }
        }
        None => outputs.notes.push("no predictions: PR curve skipped".into()),
    }
    Ok(outputs)
}

/// SHA-256 of a file, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| ImiliaError::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Combined digest over several files (order-sensitive).
pub fn sha256_files(paths: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in paths {
        let bytes = fs::read(path).map_err(|e| ImiliaError::io(path, e))?;
        hasher.update(path.to_string_lossy().as_bytes());
        hasher.update(bytes);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Reproducibility manifest: tool version, seed and input/output digests.
/// Contains no timestamps, so identical runs serialize identically.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn new(seed: u64) -> Self {
        Self {
            tool: "imilia".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            stages: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_stage(&mut self, name: &str, status: &str, note: Option<String>) {
        self.stages.push(StageRecord { name: name.into(), status: status.into(), note });
    }

    pub fn add_input(&mut self, base: &Path, path: &Path) -> Result<()> {
        self.inputs.push(entry(base, path)?);
        Ok(())
    }

    pub fn add_output(&mut self, base: &Path, path: &Path) -> Result<()> {
        self.outputs.push(entry(base, path)?);
        Ok(())
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.inputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| ImiliaError::io(path, e))
    }
}

fn entry(base: &Path, path: &Path) -> Result<ManifestEntry> {
    let rel = path.strip_prefix(base).unwrap_or(path);
    Ok(ManifestEntry { path: rel.to_string_lossy().into_owned(), sha256: sha256_file(path)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use imilia_core::chowder::Side;

    fn row(side: Side, lymphocytes: usize, rho: f64) -> (String, TileFeatureRow) {
        let mut counts = [0usize; 7];
        counts[1] = lymphocytes;
        (
            "cohortA".to_string(),
            TileFeatureRow {
                slide_id: "s".into(),
                tile_id: format!("t{lymphocytes}_{side}"),
                side,
                counts,
                other_count: 0,
                epithelium_area_um2: 50.0,
                empty_epithelium: false,
                densities: [0.0, rho, 0.0, 0.0, 0.0],
            },
        )
    }

    #[test]
    fn assemble_full_report() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<(String, TileFeatureRow)> = (0..12)
            .flat_map(|i| {
                vec![row(Side::Min, i, 0.001 * i as f64), row(Side::Max, i + 10, 0.01 * i as f64)]
            })
            .collect();
        let preds = vec![
            PredictionRow { slide_id: "a".into(), probability: 0.9, label: Some(1) },
            PredictionRow { slide_id: "b".into(), probability: 0.2, label: Some(0) },
            PredictionRow { slide_id: "c".into(), probability: 0.7, label: Some(1) },
            PredictionRow { slide_id: "d".into(), probability: 0.4, label: None },
        ];
        let outputs = assemble(dir.path(), Some(&rows), Some(&preds)).unwrap();
        let names: Vec<String> = outputs
            .written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"composition.csv".to_string()));
        assert!(names.contains(&"violin_counts.svg".to_string()));
        assert!(names.contains(&"violin_density.svg".to_string()));
        assert!(names.contains(&"pr_curve.svg".to_string()));
        assert!(names.contains(&"pr_curve.csv".to_string()));
    }

    #[test]
    fn degrades_to_score_only() {
        let dir = tempfile::tempdir().unwrap();
        let preds = vec![
            PredictionRow { slide_id: "a".into(), probability: 0.9, label: Some(1) },
            PredictionRow { slide_id: "b".into(), probability: 0.2, label: Some(0) },
        ];
        let outputs = assemble(dir.path(), None, Some(&preds)).unwrap();
        assert!(outputs.notes.iter().any(|n| n.contains("no tile features")));
        assert!(outputs.written.iter().any(|p| p.ends_with("pr_curve.svg")));
        assert!(!dir.path().join("composition.csv").exists());
    }

    #[test]
    fn manifest_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.txt");
        fs::write(&input, "payload").unwrap();
        let write_one = |name: &str| -> Vec<u8> {
            let mut m = RunManifest::new(7);
            m.add_stage("train", "done", None);
            m.add_input(dir.path(), &input).unwrap();
            let p = dir.path().join(name);
            m.write(&p).unwrap();
            fs::read(&p).unwrap()
        };
        assert_eq!(write_one("a.json"), write_one("b.json"));
    }

    #[test]
    fn sha256_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
