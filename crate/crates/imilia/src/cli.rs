//! Command-line interface: one subcommand per pipeline operation plus the
//! end-to-end `pipeline` runner.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use imilia_core::chowder::{cross_validate, extract_extremes, score_slide, Side};
use imilia_core::episeg::{self, binarize, infer_extreme_tile, pool_mask, TrainingPairs};
use imilia_core::folds::make_folds;
use imilia_core::interpret::tile_features;
use imilia_core::metrics::roc_auc;
use imilia_core::preprocess::{tessellate, tissue_mask, RgbRaster, TissueMaskConfig};
use imilia_core::synth::SynthParams;
use imilia_core::BinMask;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{ImiliaError, Result};
use crate::eval::{EvalOptions, Metric};
use crate::manifest::{load_bags, load_dataset};
use crate::report::RunManifest;
use crate::scores::{self, PredictionRow};
use crate::{cells, container, eval, model_io, pgm, pipeline, report, synthgen};

#[derive(Parser, Debug)]
#[command(
    name = "imilia",
    version,
    about = "Weakly-supervised slide-level inflammation scoring with interpretable tile features"
)]
pub struct Cli {
    /// Seed for all stochastic behavior (falls back to IMILIA_SEED).
    #[arg(long, global = true, env = "IMILIA_SEED")]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tissue mask and tile grid from a slide image.
    Preprocess(PreprocessArgs),
    /// Cross-validated MIL training from a dataset manifest.
    Train(TrainArgs),
    /// Ensemble inference: tile score table and slide predictions.
    Infer(InferArgs),
    /// Cohort-wide extreme tiles from a score table.
    Extremes(ExtremesArgs),
    /// Fit the epithelium classifier from patch grids and pixel masks.
    EpisegTrain(EpisegTrainArgs),
    /// Epithelium inference over patch-grid containers.
    EpisegInfer(EpisegInferArgs),
    /// Per-tile interpretable features from cells and epithelium masks.
    Features(FeaturesArgs),
    /// Evaluate predictions against ground truth.
    Eval(EvalArgs),
    /// Assemble composition tables, violins and the PR curve.
    Report(ReportArgs),
    /// Run every stage end to end from a config file.
    Pipeline(PipelineArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = imilia_core::preprocess::DEFAULT_TILE_SIZE)]
    pub tile_size: usize,
    #[arg(long, default_value_t = imilia_core::preprocess::DEFAULT_MIN_TISSUE_FRAC)]
    pub min_tissue_frac: f64,
    #[arg(long, default_value_t = imilia_core::preprocess::DEFAULT_MPP)]
    pub mpp: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Optional TOML config; CLI flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Directory holding model_fold*.json/.bin.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scores_out: PathBuf,
    /// Slide-probability CSV (defaults next to the score table).
    #[arg(long)]
    pub preds_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtremesArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// max, min, or both.
    #[arg(long, default_value = "both")]
    pub side: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EpisegTrainArgs {
    /// Directory of `<stem>.json/.bin` patch grids with `<stem>.mask.pgm`
    /// pixel masks.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Comma-separated C grid.
    #[arg(long, default_value = "1e-3,1e-2,1e-1")]
    pub grid: String,
    #[arg(long, default_value_t = episeg::DEFAULT_SELECT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = 14)]
    pub patch: usize,
    /// Output model stem (writes `<out>.json` + `<out>.bin`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EpisegInferArgs {
    /// Model stem as written by episeg-train.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of patch-grid containers.
    #[arg(long)]
    pub tiles: PathBuf,
    #[arg(long, default_value_t = episeg::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Treat grids as plain tiles even if they are expansion-sized.
    #[arg(long, default_value_t = false)]
    pub no_crop: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// Directory of `<slide>__<tile>.cells.jsonl` files.
    #[arg(long)]
    pub cells: PathBuf,
    /// Directory of `<slide>__<tile>.mask.pgm` epithelium masks.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Extreme-tile list from `imilia extremes`.
    #[arg(long)]
    pub extremes: PathBuf,
    #[arg(long, default_value_t = imilia_core::preprocess::DEFAULT_TILE_SIZE)]
    pub tile_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// auc | ap | pearson | f1 | pq.
    #[arg(long)]
    pub metric: String,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// features.csv from `imilia features` (optional).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// predictions.csv from `imilia infer`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub slides: usize,
    #[arg(long, default_value_t = 100)]
    pub tiles_min: usize,
    #[arg(long, default_value_t = 300)]
    pub tiles_max: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.3)]
    pub signal_frac: f64,
    #[arg(long, default_value = "synthetic")]
    pub cohort: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| ImiliaError::invalid(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args, cli.seed),
        Command::Infer(args) => cmd_infer(args),
        Command::Extremes(args) => cmd_extremes(args),
        Command::EpisegTrain(args) => cmd_episeg_train(args, seed),
        Command::EpisegInfer(args) => cmd_episeg_infer(args),
        Command::Features(args) => cmd_features(args),
        Command::Eval(args) => cmd_eval(args, seed),
        Command::Report(args) => cmd_report(args, seed),
        Command::Pipeline(args) => cmd_pipeline(args, cli.seed),
        Command::Synth(args) => cmd_synth(args, seed),
    }
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let image = image::open(&args.image)
        .map_err(|e| ImiliaError::format(&args.image, e.to_string()))?
        .to_rgb8();
    let raster =
        RgbRaster::new(image.width() as usize, image.height() as usize, image.into_raw())?;
    let outcome = tissue_mask(&raster, &TissueMaskConfig::default());
    if outcome.degenerate {
        log::warn!("degenerate image (single color): tissue mask is empty");
    }
    let grid = tessellate(&outcome.mask, args.tile_size, args.min_tissue_frac, args.mpp)?;
    fs::create_dir_all(&args.out).map_err(|e| ImiliaError::io(&args.out, e))?;
    pgm::write_mask(&args.out.join("tissue_mask.pgm"), &outcome.mask)?;
    scores::write_tile_manifest(&args.out.join("tiles.csv"), &grid)?;
    println!("tiles={} mask_px={}", grid.tiles.len(), outcome.mask.count_ones());
    Ok(())
}

fn cmd_train(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let mut c = RunConfig::load(path)?;
            c.resolve_paths(path);
            c
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.run.seed = s;
    }
    config.chowder.folds = args.folds;
    if let Some(epochs) = args.epochs {
        config.chowder.n_epochs = epochs;
    }

    let records = load_dataset(&args.manifest)?;
    let bags = load_bags(&records)?;
    let labeled: Vec<(&str, u8)> =
        bags.iter().filter_map(|b| b.label.map(|l| (b.slide_id.as_str(), l))).collect();
    let folds = make_folds(labeled, config.chowder.folds, config.run.seed)?;
    let chowder_cfg = config.chowder.to_config(config.run.seed);
    let outcome = cross_validate(&bags, &folds, &chowder_cfg)?;

    model_io::save_ensemble(&args.out, &outcome.models, config.run.seed)?;
    let oof: Vec<PredictionRow> = outcome
        .oof
        .iter()
        .map(|p| PredictionRow {
            slide_id: p.slide_id.clone(),
            probability: p.probability,
            label: Some(p.label),
        })
        .collect();
    scores::write_predictions(&args.out.join("oof_predictions.csv"), &oof)?;
    let probs: Vec<f64> = outcome.oof.iter().map(|p| p.probability).collect();
    let labels: Vec<u8> = outcome.oof.iter().map(|p| p.label).collect();
    let auc = roc_auc(&probs, &labels)?;
    println!("cv_auc={auc} folds={} slides={}", folds.n_folds, probs.len());
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let models = model_io::load_ensemble(&args.models)?;
    let records = load_dataset(&args.manifest)?;
    let per_slide: Vec<(PredictionRow, Vec<imilia_core::chowder::ScoreRow>)> = records
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
    scores::write_score_table(&args.scores_out, &all_rows)?;
    let preds_out = args.preds_out.unwrap_or_else(|| {
        args.scores_out.with_file_name("predictions.csv")
    });
    scores::write_predictions(&preds_out, &predictions)?;
    println!("slides={} score_rows={}", predictions.len(), all_rows.len());
    Ok(())
}

fn cmd_extremes(args: ExtremesArgs) -> Result<()> {
    let rows = scores::read_score_table(&args.scores)?;
    let sides: Vec<Side> = match args.side.as_str() {
        "max" => vec![Side::Max],
        "min" => vec![Side::Min],
        "both" => vec![Side::Max, Side::Min],
        other => {
            return Err(ImiliaError::invalid(format!("side must be max|min|both, got {other:?}")))
        }
    };
    let mut per_side = Vec::new();
    for side in sides {
        let (tiles, truncated) = extract_extremes(&rows, args.n, side);
        if truncated {
            log::warn!("side {side}: fewer than {} tiles available; returning all", args.n);
        }
        println!("side={side} tiles={}", tiles.len());
        per_side.push((side, tiles));
    }
    scores::write_extremes(&args.out, &per_side)?;
    Ok(())
}

fn cmd_episeg_train(args: EpisegTrainArgs, seed: u64) -> Result<()> {
    let grid_values: Vec<f64> = args
        .grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| ImiliaError::invalid(format!("bad C value {s:?} in --grid")))
        })
        .collect::<Result<_>>()?;

    // Collect (embedding, pooled-label) pairs across the directory.
    let mut stems: Vec<PathBuf> = Vec::new();
    let entries = fs::read_dir(&args.pairs).map_err(|e| ImiliaError::io(&args.pairs, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| ImiliaError::io(&args.pairs, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".json") {
            stems.push(args.pairs.join(name.trim_end_matches(".json")));
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(ImiliaError::format(&args.pairs, "no patch-grid containers found"));
    }

    let mut pairs: Option<TrainingPairs> = None;
    for stem in &stems {
        let (grid, _) = container::read_patch_grid(stem)?;
        let mut mask_path = stem.as_os_str().to_owned();
        mask_path.push(".mask.pgm");
        let mask = pgm::read_mask(Path::new(&mask_path))?;
        let labels = pool_mask(&mask, args.patch)?;
        if labels.rows != grid.rows || labels.cols != grid.cols {
            return Err(ImiliaError::format(
                stem,
                format!(
                    "pooled mask {}x{} does not align with grid {}x{}",
                    labels.rows, labels.cols, grid.rows, grid.cols
                ),
            ));
        }
        let pairs = pairs.get_or_insert_with(|| TrainingPairs::new(grid.dim));
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let x: Vec<f64> = grid.patch(r, c).iter().map(|&v| v as f64).collect();
                pairs.push(&x, labels.values[r * labels.cols + c]);
            }
        }
    }
    let pairs = pairs.expect("at least one container");
    println!("pairs={} dim={}", pairs.len(), pairs.dim);

    let (best_c, per_c) = episeg::select_c(&pairs, &grid_values, args.folds, seed)?;
    for (c, ap) in &per_c {
        println!("candidate_c={c} oof_ap={ap}");
    }
    let (model, report) = episeg::fit(&pairs, best_c)?;
    println!(
        "best_c={best_c} converged={} grad_max_norm={}",
        report.converged, report.grad_max_norm
    );
    model_io::save_episeg(&args.out, &model)?;
    Ok(())
}

fn cmd_episeg_infer(args: EpisegInferArgs) -> Result<()> {
    let model = model_io::load_episeg(&args.model)?;
    let geometry = imilia_core::episeg::ExpansionGeometry::default();
    let mut stems: Vec<PathBuf> = Vec::new();
    let entries = fs::read_dir(&args.tiles).map_err(|e| ImiliaError::io(&args.tiles, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| ImiliaError::io(&args.tiles, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".json") {
            stems.push(args.tiles.join(name.trim_end_matches(".json")));
        }
    }
    stems.sort();
    fs::create_dir_all(&args.out).map_err(|e| ImiliaError::io(&args.out, e))?;
    let mut count = 0usize;
    for stem in &stems {
        let (grid, header) = container::read_patch_grid(stem)?;
        let name = stem.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let expanded = !args.no_crop
            && (grid.rows == geometry.expansion_patches()
                || header.origin_row.is_some()
                || header.origin_col.is_some());
        let probs = if expanded {
            let origin = (header.origin_row.unwrap_or(0), header.origin_col.unwrap_or(0));
            let inference = infer_extreme_tile(&model, &grid, origin, &geometry)?;
            if inference.mirrored {
                log::warn!("{name}: border context mirrored");
            }
            inference.probs
        } else {
            imilia_core::episeg::infer_tile(&model, &grid)?
        };
        pgm::write_prob_grid(&args.out.join(format!("{name}.prob.pgm")), &probs)?;
        let mask = binarize(&probs, args.threshold, geometry.patch_px)?;
        pgm::write_mask(&args.out.join(format!("{name}.mask.pgm")), &mask)?;
        count += 1;
    }
    println!("inferred={count}");
    Ok(())
}

fn cmd_features(args: FeaturesArgs) -> Result<()> {
    let records = load_dataset(&args.manifest)?;
    let extremes = scores::read_extremes(&args.extremes)?;
    let mut rows = Vec::new();
    let mut missing = 0usize;
    for row in &extremes {
        let record = records
            .iter()
            .find(|r| r.slide_id == row.slide_id)
            .ok_or_else(|| ImiliaError::invalid(format!("unknown slide {}", row.slide_id)))?;
        let cells_path = args.cells.join(format!("{}__{}.cells.jsonl", row.slide_id, row.tile_id));
        if !cells_path.exists() {
            missing += 1;
            continue;
        }
        let by_tile = cells::load_cells(&cells_path, Some(args.tile_size as f64))?;
        let tile_cells = by_tile.get(&row.tile_id).cloned().unwrap_or_default();
        let mask_path = args.masks.join(format!("{}__{}.mask.pgm", row.slide_id, row.tile_id));
        let mask = if mask_path.exists() {
            pgm::read_mask(&mask_path)?
        } else {
            BinMask::zeros(args.tile_size, args.tile_size)
        };
        rows.push((
            record.cohort.clone(),
            tile_features(
                &row.slide_id,
                &row.tile_id,
                row.side,
                &tile_cells,
                &mask,
                (record.mpp_x, record.mpp_y),
            ),
        ));
    }
    if missing > 0 {
        log::warn!("{missing} extreme tiles had no cell file; skipped");
    }
    scores::write_feature_rows(&args.out, &rows)?;
    println!("feature_rows={} skipped={missing}", rows.len());
    Ok(())
}

fn cmd_eval(args: EvalArgs, seed: u64) -> Result<()> {
    let metric: Metric =
        args.metric.parse().map_err(ImiliaError::Invalid)?;
    let options = EvalOptions { bootstrap: args.bootstrap, level: args.level, seed };
    let lines = eval::evaluate(metric, &args.pred, &args.gt, &options)?;
    for line in lines {
        println!("{}", line.render());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs, seed: u64) -> Result<()> {
    let features = match &args.features {
        Some(path) => Some(scores::read_feature_rows(path)?),
        None => None,
    };
    let predictions = scores::read_predictions(&args.scores)?;
    let outputs = report::assemble(&args.out, features.as_deref(), Some(&predictions))?;
    for note in &outputs.notes {
        log::warn!("{note}");
    }
    let mut manifest = RunManifest::new(seed);
    manifest.add_stage("report", "done", None);
    if let Some(path) = &args.features {
        manifest.add_input(&args.out, path)?;
    }
    manifest.add_input(&args.out, &args.scores)?;
    for path in &outputs.written {
        manifest.add_output(&args.out, path)?;
    }
    manifest.write(&args.out.join("run_manifest.json"))?;
    println!("written={}", outputs.written.len() + 1);
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs, seed: Option<u64>) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    config.resolve_paths(&args.config);
    if let Some(s) = seed {
        config.run.seed = s;
    }
    if config.run.threads > 0 {
        // Best effort; the pool may already exist from --threads.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.threads)
            .build_global();
    }
    pipeline::run(config, &args.out)?;
    println!("pipeline_done out={}", args.out.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs, seed: u64) -> Result<()> {
    let params = SynthParams {
        n_slides: args.slides,
        n_tiles_range: (args.tiles_min, args.tiles_max),
        dim: args.dim,
        separation: args.separation,
        signal_fraction: args.signal_frac,
        seed,
    };
    params.validate()?;
    let manifest = synthgen::write_synth_dataset(&args.out, &params, &args.cohort)?;
    println!("manifest={}", manifest.display());
    Ok(())
}
