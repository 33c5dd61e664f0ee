//! Staged end-to-end run: (optional) preprocess, cross-validated training,
//! ensemble inference, extreme-tile extraction, epithelium inference,
//! interpretable features, report, and a reproducibility manifest.
//!
//! Each completed stage writes a marker under `stages/`; a failure aborts
//! with the stage name and its input digest while earlier outputs stay
//! intact. All randomness derives from the configured seed, so a rerun with
//! the same seed reproduces every artifact byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use imilia_core::chowder::{
    cross_validate, extract_extremes, score_slide, ExtremeTile, ScoreRow, Side,
};
use imilia_core::episeg::{binarize, infer_extreme_tile};
use imilia_core::folds::make_folds;
use imilia_core::interpret::tile_features;
use imilia_core::metrics::roc_auc;
use imilia_core::preprocess::{tessellate, tissue_mask, RgbRaster, TissueMaskConfig};
use imilia_core::BinMask;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{ImiliaError, Result};
use crate::manifest::{load_bags, load_dataset, SlideRecord};
use crate::report::{self, RunManifest};
use crate::scores::{self, PredictionRow};
use crate::{cells, container, model_io, pgm};

struct Ctx {
    config: RunConfig,
    out: PathBuf,
    event_seq: u64,
    written: Vec<PathBuf>,
    manifest: RunManifest,
}

impl Ctx {
    fn event(&mut self, stage: &str, event: &str, detail: &str) -> Result<()> {
        self.event_seq += 1;
        let line = serde_json::json!({
            "seq": self.event_seq,
            "stage": stage,
            "event": event,
            "detail": detail,
        });
        let path = self.out.join("events.jsonl");
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ImiliaError::io(&path, e))?;
        writeln!(file, "{line}").map_err(|e| ImiliaError::io(&path, e))?;
        Ok(())
    }

    fn mark_done(&mut self, stage: &str, digest: &str, note: Option<String>) -> Result<()> {
        let dir = self.out.join("stages");
        fs::create_dir_all(&dir).map_err(|e| ImiliaError::io(&dir, e))?;
        let path = dir.join(format!("{stage}.json"));
        let body = serde_json::json!({
            "stage": stage,
            "status": "done",
            "inputs_digest": digest,
            "note": note,
        });
        fs::write(&path, serde_json::to_string_pretty(&body).expect("marker serializes"))
            .map_err(|e| ImiliaError::io(&path, e))?;
        self.manifest.add_stage(stage, "done", note);
        Ok(())
    }

    fn track(&mut self, path: PathBuf) {
        self.written.push(path);
    }
}

fn stage_error(stage: &str, digest: &str, err: ImiliaError) -> ImiliaError {
    ImiliaError::Stage { stage: stage.into(), digest: digest.into(), message: err.to_string() }
}

/// Run the full pipeline into `out_dir`.
pub fn run(config: RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| ImiliaError::io(out_dir, e))?;
    // A fresh event log per run keeps reruns byte-identical.
    let events = out_dir.join("events.jsonl");
    if events.exists() {
        fs::remove_file(&events).map_err(|e| ImiliaError::io(&events, e))?;
    }
    let seed = config.run.seed;
    let mut ctx = Ctx {
        config,
        out: out_dir.to_path_buf(),
        event_seq: 0,
        written: Vec::new(),
        manifest: RunManifest::new(seed),
    };

    stage_preprocess(&mut ctx)?;
    let (records, extremes) = {
        let records = stage_train(&mut ctx)?;
        let score_rows = stage_infer(&mut ctx, &records)?;
        let extremes = stage_extremes(&mut ctx, &score_rows)?;
        (records, extremes)
    };
    stage_episeg(&mut ctx, &extremes)?;
    stage_features(&mut ctx, &records, &extremes)?;
    stage_report(&mut ctx)?;

    // Reproducibility manifest last, covering everything written.
    if let Some(manifest_path) = ctx.config.paths.manifest.clone() {
        ctx.manifest.add_input(&ctx.out, &manifest_path)?;
    }
    for path in ctx.written.clone() {
        ctx.manifest.add_output(&ctx.out, &path)?;
    }
    let manifest_path = out_dir.join("run_manifest.json");
    ctx.manifest.write(&manifest_path)?;
    Ok(())
}

fn stage_preprocess(ctx: &mut Ctx) -> Result<()> {
    const STAGE: &str = "preprocess";
    let Some(image_path) = ctx.config.paths.image.clone() else {
        ctx.event(STAGE, "skip", "no image configured")?;
        return Ok(());
    };
    let digest = report::sha256_file(&image_path)?;
    ctx.event(STAGE, "start", &image_path.to_string_lossy())?;
    let run = || -> Result<(PathBuf, PathBuf, bool)> {
        let image = image::open(&image_path)
            .map_err(|e| ImiliaError::format(&image_path, e.to_string()))?
            .to_rgb8();
        let raster = RgbRaster::new(
            image.width() as usize,
            image.height() as usize,
            image.into_raw(),
        )?;
        let outcome = tissue_mask(&raster, &TissueMaskConfig::default());
        let grid = tessellate(
            &outcome.mask,
            ctx.config.preprocess.tile_size,
            ctx.config.preprocess.min_tissue_frac,
            ctx.config.preprocess.mpp,
        )?;
        let dir = ctx.out.join("preprocess");
        fs::create_dir_all(&dir).map_err(|e| ImiliaError::io(&dir, e))?;
        let mask_path = dir.join("tissue_mask.pgm");
        pgm::write_mask(&mask_path, &outcome.mask)?;
        let tiles_path = dir.join("tiles.csv");
        scores::write_tile_manifest(&tiles_path, &grid)?;
        Ok((mask_path, tiles_path, outcome.degenerate))
    };
    let (mask_path, tiles_path, degenerate) =
        run().map_err(|e| stage_error(STAGE, &digest, e))?;
    ctx.track(mask_path);
    ctx.track(tiles_path);
    let note = degenerate.then(|| "degenerate image: empty tissue mask".to_string());
    if let Some(n) = &note {
        log::warn!("{STAGE}: {n}");
    }
    ctx.mark_done(STAGE, &digest, note)?;
    ctx.event(STAGE, "done", "")?;
    Ok(())
}

fn stage_train(ctx: &mut Ctx) -> Result<Vec<SlideRecord>> {
    const STAGE: &str = "train";
    let manifest_path = ctx
        .config
        .paths
        .manifest
        .clone()
        .ok_or_else(|| ImiliaError::invalid("pipeline needs [paths].manifest"))?;
    let digest = report::sha256_file(&manifest_path)?;
    ctx.event(STAGE, "start", &manifest_path.to_string_lossy())?;

    let run = |ctx: &mut Ctx| -> Result<Vec<SlideRecord>> {
        let records = load_dataset(&manifest_path)?;
        let bags = load_bags(&records)?;
        let labeled: Vec<(&str, u8)> = bags
            .iter()
            .filter_map(|b| b.label.map(|l| (b.slide_id.as_str(), l)))
            .collect();
        let folds = make_folds(labeled, ctx.config.chowder.folds, ctx.config.run.seed)?;
        let chowder_cfg = ctx.config.chowder.to_config(ctx.config.run.seed);
        let outcome = cross_validate(&bags, &folds, &chowder_cfg)?;

        let models_dir = ctx.out.join("models");
        model_io::save_ensemble(&models_dir, &outcome.models, ctx.config.run.seed)?;
        for k in 0..outcome.models.len() {
            ctx.track(models_dir.join(format!("model_fold{k}.json")));
            ctx.track(models_dir.join(format!("model_fold{k}.bin")));
        }

        // Fold assignment.
        let folds_path = ctx.out.join("folds.csv");
        let mut writer = csv::Writer::from_path(&folds_path)
            .map_err(|e| ImiliaError::format(&folds_path, e.to_string()))?;
        writer
            .write_record(["slide_id", "fold"])
            .map_err(|e| ImiliaError::format(&folds_path, e.to_string()))?;
        for (slide_id, fold) in &folds.assignment {
            writer
                .write_record([slide_id.as_str(), &fold.to_string()])
                .map_err(|e| ImiliaError::format(&folds_path, e.to_string()))?;
        }
        writer.flush().map_err(|e| ImiliaError::io(&folds_path, e))?;
        ctx.track(folds_path);

        // Out-of-fold predictions and CV AUC.
        let oof_path = ctx.out.join("oof_predictions.csv");
        let rows: Vec<PredictionRow> = outcome
            .oof
            .iter()
            .map(|p| PredictionRow {
                slide_id: p.slide_id.clone(),
                probability: p.probability,
                label: Some(p.label),
            })
            .collect();
        scores::write_predictions(&oof_path, &rows)?;
        ctx.track(oof_path);

        let probs: Vec<f64> = outcome.oof.iter().map(|p| p.probability).collect();
        let labels: Vec<u8> = outcome.oof.iter().map(|p| p.label).collect();
        let auc = roc_auc(&probs, &labels)?;
        log::info!("{STAGE}: cross-validated AUC {auc:.4} over {} slides", probs.len());

        // Per-epoch training log.
        let log_path = ctx.out.join("training_log.csv");
        let mut writer = csv::Writer::from_path(&log_path)
            .map_err(|e| ImiliaError::format(&log_path, e.to_string()))?;
        writer
            .write_record(["fold", "epoch", "train_loss", "train_auc", "valid_loss", "valid_auc", "best"])
            .map_err(|e| ImiliaError::format(&log_path, e.to_string()))?;
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (fold, log) in outcome.logs.iter().enumerate() {
            for stats in &log.epochs {
                writer
                    .write_record([
                        fold.to_string(),
                        stats.epoch.to_string(),
                        stats.train_loss.to_string(),
                        fmt_opt(stats.train_auc),
                        fmt_opt(stats.valid_loss),
                        fmt_opt(stats.valid_auc),
                        (stats.epoch == log.best_epoch).to_string(),
                    ])
                    .map_err(|e| ImiliaError::format(&log_path, e.to_string()))?;
            }
        }
        writer.flush().map_err(|e| ImiliaError::io(&log_path, e))?;
        ctx.track(log_path);

        // Summary for the manifest note.
        let metrics_path = ctx.out.join("cv_metrics.json");
        let body = serde_json::json!({"cv_auc": auc, "n_slides": probs.len()});
        fs::write(&metrics_path, serde_json::to_string_pretty(&body).expect("serializes"))
            .map_err(|e| ImiliaError::io(&metrics_path, e))?;
        ctx.track(metrics_path);
        Ok(records)
    };
    let records = run(ctx).map_err(|e| stage_error(STAGE, &digest, e))?;
    ctx.mark_done(STAGE, &digest, None)?;
    ctx.event(STAGE, "done", "")?;
    Ok(records)
}

fn stage_infer(ctx: &mut Ctx, records: &[SlideRecord]) -> Result<Vec<ScoreRow>> {
    const STAGE: &str = "infer";
    let models_dir = ctx.out.join("models");
    let digest = report::sha256_file(&models_dir.join("model_fold0.json"))?;
    ctx.event(STAGE, "start", "")?;

    let run = |ctx: &mut Ctx| -> Result<Vec<ScoreRow>> {
        let models = model_io::load_ensemble(&models_dir)?;
        let per_slide: Vec<(PredictionRow, Vec<ScoreRow>)> = records
            .par_iter()
            .map(|record| {
                let features = crate::manifest::load_features(record)?;
                let (pred, rows) = score_slide(&models, &record.slide_id, &features)?;
                Ok((
                    PredictionRow {
                        slide_id: pred.slide_id,
                        probability: pred.probability,
                        label: record.label,
                    },
                    rows,
                ))
            })
            .collect::<Result<_>>()?;

        let mut all_rows = Vec::new();
        let mut predictions = Vec::new();
        for (pred, rows) in per_slide {
            predictions.push(pred);
            all_rows.extend(rows);
        }
        let scores_path = ctx.out.join("scores.csv");
        scores::write_score_table(&scores_path, &all_rows)?;
        ctx.track(scores_path);
        let preds_path = ctx.out.join("predictions.csv");
        scores::write_predictions(&preds_path, &predictions)?;
        ctx.track(preds_path);
        Ok(all_rows)
    };
    let rows = run(ctx).map_err(|e| stage_error(STAGE, &digest, e))?;
    ctx.mark_done(STAGE, &digest, None)?;
    ctx.event(STAGE, "done", "")?;
    Ok(rows)
}

fn stage_extremes(ctx: &mut Ctx, score_rows: &[ScoreRow]) -> Result<Vec<scores::ExtremeRow>> {
    const STAGE: &str = "extremes";
    let digest = format!("{}-rows", score_rows.len());
    ctx.event(STAGE, "start", "")?;
    let n = ctx.config.extremes.n_per_side;
    let run = |ctx: &mut Ctx| -> Result<Vec<scores::ExtremeRow>> {
        let (max_tiles, max_truncated) = extract_extremes(score_rows, n, Side::Max);
        let (min_tiles, min_truncated) = extract_extremes(score_rows, n, Side::Min);
        if max_truncated || min_truncated {
            log::warn!("{STAGE}: fewer than {n} tiles available; returning all");
        }
        let path = ctx.out.join("extremes.csv");
        scores::write_extremes(
            &path,
            &[(Side::Max, max_tiles.clone()), (Side::Min, min_tiles.clone())],
        )?;
        ctx.track(path);
        let to_rows = |side: Side, tiles: Vec<ExtremeTile>| {
            tiles.into_iter().map(move |t| scores::ExtremeRow {
                slide_id: t.slide_id,
                tile_id: t.tile_id,
                score: t.score,
                side,
            })
        };
        Ok(to_rows(Side::Max, max_tiles).chain(to_rows(Side::Min, min_tiles)).collect())
    };
    let rows = run(ctx).map_err(|e| stage_error(STAGE, &digest, e))?;
    ctx.mark_done(STAGE, &digest, None)?;
    ctx.event(STAGE, "done", "")?;
    Ok(rows)
}

fn stage_episeg(ctx: &mut Ctx, extremes: &[scores::ExtremeRow]) -> Result<()> {
    const STAGE: &str = "episeg";
    let (Some(model_stem), Some(grids_dir)) = (
        ctx.config.paths.episeg_model.clone(),
        ctx.config.paths.patch_grids_dir.clone(),
    ) else {
        ctx.event(STAGE, "skip", "no epithelium model or patch grids configured")?;
        log::warn!("{STAGE}: skipped (model or patch grids not configured)");
        ctx.mark_done(STAGE, "unavailable", Some("skipped: inputs not configured".into()))?;
        return Ok(());
    };
    let mut json_stem = model_stem.as_os_str().to_owned();
    json_stem.push(".json");
    let digest = report::sha256_file(Path::new(&json_stem))?;
    ctx.event(STAGE, "start", "")?;

    let run = |ctx: &mut Ctx| -> Result<(usize, usize)> {
        let model = model_io::load_episeg(&model_stem)?;
        let geometry = ctx.config.episeg.geometry();
        let out_dir = ctx.out.join("episeg");
        fs::create_dir_all(&out_dir).map_err(|e| ImiliaError::io(&out_dir, e))?;
        let mut inferred = 0usize;
        let mut missing = 0usize;
        for row in extremes {
            let stem = grids_dir.join(format!("{}__{}", row.slide_id, row.tile_id));
            let mut probe = stem.as_os_str().to_owned();
            probe.push(".json");
            if !Path::new(&probe).exists() {
                missing += 1;
                continue;
            }
            let (grid, header) = container::read_patch_grid(&stem)?;
            let origin = (header.origin_row.unwrap_or(0), header.origin_col.unwrap_or(0));
            let inference = infer_extreme_tile(&model, &grid, origin, &geometry)?;
            if inference.mirrored {
                log::warn!(
                    "{STAGE}: {}/{} mirrored border context",
                    row.slide_id,
                    row.tile_id
                );
            }
            let prob_path = out_dir.join(format!("{}__{}.prob.pgm", row.slide_id, row.tile_id));
            pgm::write_prob_grid(&prob_path, &inference.probs)?;
            ctx.track(prob_path);
            let mask = binarize(
                &inference.probs,
                ctx.config.episeg.threshold,
                ctx.config.episeg.patch_px,
            )?;
            let mask_path = out_dir.join(format!("{}__{}.mask.pgm", row.slide_id, row.tile_id));
            pgm::write_mask(&mask_path, &mask)?;
            ctx.track(mask_path);
            inferred += 1;
        }
        Ok((inferred, missing))
    };
    let (inferred, missing) = run(ctx).map_err(|e| stage_error(STAGE, &digest, e))?;
    let note = (missing > 0).then(|| format!("{missing} extreme tiles had no patch grid"));
    if let Some(n) = &note {
        log::warn!("{STAGE}: {n}");
    }
    log::info!("{STAGE}: inferred {inferred} extreme tiles");
    ctx.mark_done(STAGE, &digest, note)?;
    ctx.event(STAGE, "done", "")?;
    Ok(())
}

fn stage_features(
    ctx: &mut Ctx,
    records: &[SlideRecord],
    extremes: &[scores::ExtremeRow],
) -> Result<()> {
    const STAGE: &str = "features";
    let Some(cells_dir) = ctx.config.paths.cells_dir.clone() else {
        ctx.event(STAGE, "skip", "no cell predictions configured")?;
        log::warn!("{STAGE}: skipped (cells_dir not configured); report degrades to score-only");
        ctx.mark_done(STAGE, "unavailable", Some("skipped: cells_dir not configured".into()))?;
        return Ok(());
    };
    let digest = cells_dir.to_string_lossy().into_owned();
    ctx.event(STAGE, "start", "")?;

    let run = |ctx: &mut Ctx| -> Result<(usize, usize)> {
        let tile_size = ctx.config.preprocess.tile_size;
        let episeg_dir = ctx.out.join("episeg");
        let mut rows = Vec::new();
        let mut missing = 0usize;
        for row in extremes {
            let record = records
                .iter()
                .find(|r| r.slide_id == row.slide_id)
                .ok_or_else(|| ImiliaError::invalid(format!("unknown slide {}", row.slide_id)))?;
            let cells_path = cells_dir.join(format!("{}__{}.cells.jsonl", row.slide_id, row.tile_id));
            if !cells_path.exists() {
                missing += 1;
                continue;
            }
            let by_tile = cells::load_cells(&cells_path, Some(tile_size as f64))?;
            let tile_cells = by_tile.get(&row.tile_id).cloned().unwrap_or_default();
            let mask_path = episeg_dir.join(format!("{}__{}.mask.pgm", row.slide_id, row.tile_id));
            let mask = if mask_path.exists() {
                pgm::read_mask(&mask_path)?
            } else {
                // No epithelium inference for this tile: the empty-mask
                // convention flags the densities instead of dropping the row.
                BinMask::zeros(tile_size, tile_size)
            };
            let feature_row = tile_features(
                &row.slide_id,
                &row.tile_id,
                row.side,
                &tile_cells,
                &mask,
                (record.mpp_x, record.mpp_y),
            );
            rows.push((record.cohort.clone(), feature_row));
        }
        let path = ctx.out.join("features.csv");
        scores::write_feature_rows(&path, &rows)?;
        ctx.track(path);
        Ok((rows.len(), missing))
    };
    let (written, missing) = run(ctx).map_err(|e| stage_error(STAGE, &digest, e))?;
    let note = (missing > 0).then(|| format!("{missing} extreme tiles had no cell file"));
    if let Some(n) = &note {
        log::warn!("{STAGE}: {n}");
    }
    log::info!("{STAGE}: wrote {written} feature rows");
    ctx.mark_done(STAGE, &digest, note)?;
    ctx.event(STAGE, "done", "")?;
    Ok(())
}

fn stage_report(ctx: &mut Ctx) -> Result<()> {
    const STAGE: &str = "report";
    ctx.event(STAGE, "start", "")?;
    let digest = "pipeline-outputs".to_string();
    let run = |ctx: &mut Ctx| -> Result<Vec<String>> {
        let features_path = ctx.out.join("features.csv");
        let features = if features_path.exists() {
            Some(scores::read_feature_rows(&features_path)?)
        } else {
            None
        };
        let predictions = scores::read_predictions(&ctx.out.join("predictions.csv"))?;
        let outputs = report::assemble(
            &ctx.out.join("report"),
            features.as_deref(),
            Some(&predictions),
        )?;
        for path in outputs.written {
            ctx.track(path);
        }
        Ok(outputs.notes)
    };
    let notes = run(ctx).map_err(|e| stage_error(STAGE, &digest, e))?;
    let note = (!notes.is_empty()).then(|| notes.join("; "));
    if let Some(n) = &note {
        log::warn!("{STAGE}: {n}");
    }
    ctx.mark_done(STAGE, &digest, note)?;
    ctx.event(STAGE, "done", "")?;
    Ok(())
}
