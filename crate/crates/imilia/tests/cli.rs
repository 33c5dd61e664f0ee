//! End-to-end CLI checks: every subcommand driven through the real binary
//! against synthetic fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imilia_core::episeg::{ExpansionGeometry, PatchGrid};
use imilia_core::rng;

fn imilia() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imilia"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn errors_are_machine_parsable_and_nonzero() {
    let output = imilia()
        .args(["train", "--manifest", "/nonexistent/manifest.csv", "--out", "/tmp/x"])
        .output()
        .expect("binary runs");
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let error_line = stderr.lines().last().expect("an error line");
    let parsed: serde_json::Value =
        serde_json::from_str(error_line).expect("error line is JSON");
    assert_eq!(parsed["level"], "error");
    assert!(parsed["message"].as_str().unwrap().contains("manifest"));
}

#[test]
fn unknown_metric_is_rejected() {
    let output = imilia()
        .args(["eval", "--pred", "/tmp/a.csv", "--gt", "/tmp/b.csv", "--metric", "f2"])
        .output()
        .expect("binary runs");
    assert!(!output.status.success());
}

#[test]
fn preprocess_writes_mask_and_tiles() {
    let dir = tempfile::tempdir().unwrap();
    // Pink block on white, sized for a 4x4 grid of 32 px tiles.
    let mut img = image::RgbImage::from_pixel(128, 128, image::Rgb([255, 255, 255]));
    for y in 0..64 {
        for x in 0..128 {
            img.put_pixel(x, y, image::Rgb([225, 90, 160]));
        }
    }
    let image_path = dir.path().join("slide.png");
    img.save(&image_path).unwrap();

    let out = dir.path().join("pre");
    let output = run_ok(imilia().args([
        "preprocess",
        "--image",
        image_path.to_str().unwrap(),
        "--tile-size",
        "32",
        "--min-tissue-frac",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(stdout_of(&output).contains("tiles=8"), "{}", stdout_of(&output));
    assert!(out.join("tissue_mask.pgm").exists());
    let tiles = fs::read_to_string(out.join("tiles.csv")).unwrap();
    assert!(tiles.starts_with("tile_id,x_px,y_px,tile_size_px,mpp"));
    assert_eq!(tiles.lines().count(), 9);
}

fn synth_dataset(dir: &Path, slides: usize, seed: u64) -> PathBuf {
    run_ok(imilia().args([
        "synth",
        "--slides",
        &slides.to_string(),
        "--tiles-min",
        "12",
        "--tiles-max",
        "20",
        "--dim",
        "6",
        "--separation",
        "6",
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]));
    dir.join("manifest.csv")
}

#[test]
fn train_infer_extremes_features_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth_dataset(&data, 12, 3);

    // train
    let models = dir.path().join("models");
    let output = run_ok(imilia().args([
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--folds",
        "3",
        "--epochs",
        "4",
        "--seed",
        "11",
        "--out",
        models.to_str().unwrap(),
    ]));
    assert!(stdout_of(&output).contains("cv_auc="));
    assert!(models.join("model_fold0.json").exists());
    assert!(models.join("model_fold2.bin").exists());

    // infer
    let scores_csv = dir.path().join("scores.csv");
    run_ok(imilia().args([
        "infer",
        "--models",
        models.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--scores-out",
        scores_csv.to_str().unwrap(),
    ]));
    let preds_csv = dir.path().join("predictions.csv");
    assert!(preds_csv.exists());

    // extremes
    let extremes_csv = dir.path().join("extremes.csv");
    run_ok(imilia().args([
        "extremes",
        "--scores",
        scores_csv.to_str().unwrap(),
        "--n",
        "5",
        "--side",
        "both",
        "--out",
        extremes_csv.to_str().unwrap(),
    ]));
    let extremes_text = fs::read_to_string(&extremes_csv).unwrap();
    assert_eq!(extremes_text.lines().count(), 11, "5 per side plus header");

    // features (cells for every extreme tile; no masks -> flagged densities)
    let cells_dir = dir.path().join("cells");
    fs::create_dir_all(&cells_dir).unwrap();
    for line in extremes_text.lines().skip(1) {
        let mut fields = line.split(',');
        let slide = fields.next().unwrap();
        let tile = fields.next().unwrap();
        let body = format!(
            "{}\n{}\n",
            serde_json::json!({
                "tile_id": tile, "cell_id": "c1", "class": "lymphocyte",
                "centroid": [10.0, 12.0], "polygon": [[8,10],[12,10],[10,14]]
            }),
            serde_json::json!({
                "tile_id": tile, "cell_id": "c2", "class": "cancer",
                "centroid": [40.0, 40.0], "polygon": [[38,38],[42,38],[40,42]]
            }),
        );
        fs::write(cells_dir.join(format!("{slide}__{tile}.cells.jsonl")), body).unwrap();
    }
    let masks_dir = dir.path().join("masks");
    fs::create_dir_all(&masks_dir).unwrap();
    let features_csv = dir.path().join("features.csv");
    run_ok(imilia().args([
        "features",
        "--cells",
        cells_dir.to_str().unwrap(),
        "--masks",
        masks_dir.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--extremes",
        extremes_csv.to_str().unwrap(),
        "--out",
        features_csv.to_str().unwrap(),
    ]));
    let features_text = fs::read_to_string(&features_csv).unwrap();
    assert_eq!(features_text.lines().count(), 11);
    // Cancer remapped: epithelial count 1, lymphocyte count 1 in each row.
    let first = features_text.lines().nth(1).unwrap();
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields[4], "1", "epithelial count (remapped cancer): {first}");
    assert_eq!(fields[5], "1", "lymphocyte count: {first}");
    assert_eq!(fields[13], "1", "empty epithelium flagged: {first}");

    // report
    let report_dir = dir.path().join("report");
    run_ok(imilia().args([
        "report",
        "--features",
        features_csv.to_str().unwrap(),
        "--scores",
        preds_csv.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]));
    for name in
        ["composition.csv", "violin_counts.svg", "violin_density.svg", "pr_curve.svg", "run_manifest.json"]
    {
        assert!(report_dir.join(name).exists(), "missing {name}");
    }

    // eval on the out-of-fold predictions reshaped to the id,score format
    let oof = fs::read_to_string(models.join("oof_predictions.csv")).unwrap();
    let mut pred_text = String::from("id,score\n");
    let mut gt_text = String::from("id,label\n");
    for line in oof.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        pred_text.push_str(&format!("{},{}\n", fields[0], fields[1]));
        gt_text.push_str(&format!("{},{}\n", fields[0], fields[2]));
    }
    let pred_path = dir.path().join("pred.csv");
    let gt_path = dir.path().join("gt.csv");
    fs::write(&pred_path, pred_text).unwrap();
    fs::write(&gt_path, gt_text).unwrap();
    let output = run_ok(imilia().args([
        "eval",
        "--pred",
        pred_path.to_str().unwrap(),
        "--gt",
        gt_path.to_str().unwrap(),
        "--metric",
        "auc",
        "--bootstrap",
        "100",
        "--seed",
        "4",
    ]));
    let text = stdout_of(&output);
    assert!(text.contains("metric=auc value="), "{text}");
    assert!(text.contains("ci_lo="), "{text}");
}

/// Build one patch-grid container plus its pixel mask: even patches carry an
/// epithelium signature on dim 0.
fn write_pair(dir: &Path, name: &str, rows: usize, cols: usize, seed: u64) {
    let dim = 6;
    let patch = 14;
    let mut generator = rng::rng_from_seed(seed);
    let mut data = Vec::with_capacity(rows * cols * dim);
    let mut mask = imilia_core::BinMask::zeros(cols * patch, rows * patch);
    for r in 0..rows {
        for c in 0..cols {
            let epithelium = (r + c) % 2 == 0;
            for d in 0..dim {
                let mut v = rng::normal_f64(&mut generator) as f32 * 0.3;
                if d == 0 {
                    v += if epithelium { 2.0 } else { -2.0 };
                }
                data.push(v);
            }
            if epithelium {
                for y in r * patch..(r + 1) * patch {
                    for x in c * patch..(c + 1) * patch {
                        mask.set(x, y, 1);
                    }
                }
            }
        }
    }
    let grid = PatchGrid::new(rows, cols, dim, data).unwrap();
    let stem = dir.join(name);
    let header = imilia::container::patch_grid_header(&grid);
    imilia::container::write_patch_grid(&stem, &grid, &header).unwrap();
    let mask_path = dir.join(format!("{name}.mask.pgm"));
    imilia::pgm::write_mask(&mask_path, &mask).unwrap();
}

#[test]
fn episeg_train_then_infer_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let pairs_dir = dir.path().join("pairs");
    fs::create_dir_all(&pairs_dir).unwrap();
    for i in 0..4 {
        write_pair(&pairs_dir, &format!("sample{i}"), 5, 5, 100 + i);
    }

    let model_stem = dir.path().join("episeg");
    let output = run_ok(imilia().args([
        "episeg-train",
        "--pairs",
        pairs_dir.to_str().unwrap(),
        "--grid",
        "1e-2,1e-1",
        "--folds",
        "3",
        "--seed",
        "2",
        "--out",
        model_stem.to_str().unwrap(),
    ]));
    let text = stdout_of(&output);
    assert!(text.contains("pairs=100 dim=6"), "{text}");
    assert!(text.contains("best_c="), "{text}");
    assert!(text.contains("converged=true"), "{text}");

    // Plain-tile inference on one of the training grids.
    let tiles_dir = dir.path().join("tiles");
    fs::create_dir_all(&tiles_dir).unwrap();
    write_pair(&tiles_dir, "tile0", 5, 5, 999);
    fs::remove_file(tiles_dir.join("tile0.mask.pgm")).unwrap();
    let out_dir = dir.path().join("inferred");
    run_ok(imilia().args([
        "episeg-infer",
        "--model",
        model_stem.to_str().unwrap(),
        "--tiles",
        tiles_dir.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(out_dir.join("tile0.prob.pgm").exists());
    let mask = imilia::pgm::read_mask(&out_dir.join("tile0.mask.pgm")).unwrap();
    assert_eq!((mask.width(), mask.height()), (70, 70));
    // The checkerboard signal must be recovered nearly everywhere.
    let prob = imilia::pgm::read_prob_grid(&out_dir.join("tile0.prob.pgm")).unwrap();
    let mut correct = 0;
    for r in 0..5 {
        for c in 0..5 {
            let want = (r + c) % 2 == 0;
            if (prob.get(r, c) >= 0.5) == want {
                correct += 1;
            }
        }
    }
    assert!(correct >= 23, "checkerboard recovered {correct}/25");
}

#[test]
fn episeg_infer_crops_expanded_grids() {
    let dir = tempfile::tempdir().unwrap();
    let side = ExpansionGeometry::default().expansion_patches();
    let tiles_dir = dir.path().join("tiles");
    fs::create_dir_all(&tiles_dir).unwrap();

    let dim = 3;
    let mut generator = rng::rng_from_seed(8);
    let data: Vec<f32> =
        (0..side * side * dim).map(|_| rng::uniform_f64(&mut generator) as f32 * 2.0 - 1.0).collect();
    let grid = PatchGrid::new(side, side, dim, data).unwrap();
    let stem = tiles_dir.join("ext0");
    let header = imilia::container::patch_grid_header(&grid);
    imilia::container::write_patch_grid(&stem, &grid, &header).unwrap();

    let model = imilia_core::episeg::EpiSegModel {
        weights: vec![1.0, -0.5, 0.25],
        bias: 0.0,
        c: 1e-2,
    };
    let model_stem = dir.path().join("model");
    imilia::model_io::save_episeg(&model_stem, &model).unwrap();

    let out_dir = dir.path().join("out");
    run_ok(imilia().args([
        "episeg-infer",
        "--model",
        model_stem.to_str().unwrap(),
        "--tiles",
        tiles_dir.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let prob = imilia::pgm::read_prob_grid(&out_dir.join("ext0.prob.pgm")).unwrap();
    assert_eq!((prob.rows, prob.cols), (16, 16), "center crop of the expansion");
    let mask = imilia::pgm::read_mask(&out_dir.join("ext0.mask.pgm")).unwrap();
    assert_eq!((mask.width(), mask.height()), (224, 224));
}

#[test]
fn seed_env_fallback_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(imilia().args([
        "synth", "--slides", "3", "--tiles-min", "4", "--tiles-max", "6", "--dim", "3",
        "--separation", "1", "--seed", "77", "--out", a.to_str().unwrap(),
    ]));
    run_ok(
        imilia()
            .env("IMILIA_SEED", "77")
            .args([
                "synth", "--slides", "3", "--tiles-min", "4", "--tiles-max", "6", "--dim", "3",
                "--separation", "1", "--out", b.to_str().unwrap(),
            ]),
    );
    let fa = fs::read(a.join("features/synth_0000.bin")).unwrap();
    let fb = fs::read(b.join("features/synth_0000.bin")).unwrap();
    assert_eq!(fa, fb, "IMILIA_SEED must behave exactly like --seed");
}
