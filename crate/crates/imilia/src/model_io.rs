//! Model files: a JSON header plus a little-endian float32 parameter payload,
//! in the same `<stem>.json` + `<stem>.bin` convention as the feature
//! containers.
//!
//! MIL parameters are stored in the model's canonical flat order (scoring
//! heads, then MLP layers); an optional standardizer (mean then std per
//! dimension) follows the parameters in the payload.

use std::fs;
use std::path::{Path, PathBuf};

use imilia_core::chowder::{ChowderConfig, ChowderModel, Standardizer};
use imilia_core::episeg::EpiSegModel;
use imilia_core::rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImiliaError, Result};

pub const CHOWDER_SCHEMA: &str = "imilia.chowder.v1";
pub const EPISEG_SCHEMA: &str = "imilia.episeg.v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChowderHeader {
    schema: String,
    dim: usize,
    channels: usize,
    extremes_per_side: usize,
    mlp_hidden: Vec<usize>,
    mlp_dropout: Vec<f64>,
    seed: u64,
    param_count: usize,
    has_standardizer: bool,
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

fn write_f32_payload(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| ImiliaError::io(path, e))
}

fn read_f32_payload(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| ImiliaError::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(ImiliaError::format(
            path,
            format!("payload {} bytes, want {}", bytes.len(), expected * 4),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Save one MIL model; `seed` records the training seed for the manifest.
pub fn save_chowder(stem: &Path, model: &ChowderModel, seed: u64) -> Result<()> {
    let mlp_hidden: Vec<usize> =
        model.layers.iter().take(model.layers.len() - 1).map(|l| l.out_dim).collect();
    let header = ChowderHeader {
        schema: CHOWDER_SCHEMA.into(),
        dim: model.dim,
        channels: model.channels(),
        extremes_per_side: model.extremes_per_side,
        mlp_hidden,
        mlp_dropout: model.mlp_dropout.clone(),
        seed,
        param_count: model.param_count(),
        has_standardizer: model.standardizer.is_some(),
    };
    let text = serde_json::to_string(&header).expect("header serializes");
    fs::write(json_path(stem), text).map_err(|e| ImiliaError::io(json_path(stem), e))?;

    let params = model.flatten();
    let mut payload: Vec<f32> = params.iter().map(|&v| v as f32).collect();
    if let Some(s) = &model.standardizer {
        payload.extend(s.mean.iter().map(|&v| v as f32));
        payload.extend(s.std.iter().map(|&v| v as f32));
    }
    write_f32_payload(&bin_path(stem), payload.into_iter())
}

/// Load one MIL model.
pub fn load_chowder(stem: &Path) -> Result<ChowderModel> {
    let text =
        fs::read_to_string(json_path(stem)).map_err(|e| ImiliaError::io(json_path(stem), e))?;
    let header: ChowderHeader =
        serde_json::from_str(&text).map_err(|e| ImiliaError::format(json_path(stem), e.to_string()))?;
    if header.schema != CHOWDER_SCHEMA {
        return Err(ImiliaError::format(
            json_path(stem),
            format!("schema {:?}, want {CHOWDER_SCHEMA:?}", header.schema),
        ));
    }
    let cfg = ChowderConfig {
        channels: header.channels,
        extremes_per_side: header.extremes_per_side,
        mlp_hidden: header.mlp_hidden.clone(),
        mlp_dropout: header.mlp_dropout.clone(),
        seed: header.seed,
        ..ChowderConfig::default()
    };
    cfg.validate()?;
    let mut generator = rng::rng_from_seed(0);
    let mut model = ChowderModel::init(&cfg, header.dim, &mut generator);
    if model.param_count() != header.param_count {
        return Err(ImiliaError::format(
            json_path(stem),
            format!("param_count {} inconsistent with shape", header.param_count),
        ));
    }
    let extra = if header.has_standardizer { 2 * header.dim } else { 0 };
    let payload = read_f32_payload(&bin_path(stem), header.param_count + extra)?;
    let params: Vec<f64> = payload[..header.param_count].iter().map(|&v| v as f64).collect();
    model.load_flat(&params);
    if header.has_standardizer {
        let mean =
            payload[header.param_count..header.param_count + header.dim].iter().map(|&v| v as f64);
        let std = payload[header.param_count + header.dim..].iter().map(|&v| v as f64);
        model.standardizer = Some(Standardizer { mean: mean.collect(), std: std.collect() });
    }
    Ok(model)
}

/// Save a fold ensemble as `model_fold{k}` stems under a directory.
pub fn save_ensemble(dir: &Path, models: &[ChowderModel], seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ImiliaError::io(dir, e))?;
    for (k, model) in models.iter().enumerate() {
        save_chowder(&dir.join(format!("model_fold{k}")), model, rng::derive_seed(seed, k as u64))?;
    }
    Ok(())
}

/// Load every `model_fold*.json` stem under a directory, ordered by fold.
pub fn load_ensemble(dir: &Path) -> Result<Vec<ChowderModel>> {
    let mut stems: Vec<PathBuf> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| ImiliaError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| ImiliaError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("model_fold") && name.ends_with(".json") {
            stems.push(dir.join(name.trim_end_matches(".json")));
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(ImiliaError::format(dir, "no model_fold*.json files found"));
    }
    stems.iter().map(|stem| load_chowder(stem)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpiSegHeader {
    schema: String,
    dim: usize,
    c: f64,
}

/// Save the epithelium classifier.
pub fn save_episeg(stem: &Path, model: &EpiSegModel) -> Result<()> {
    let header =
        EpiSegHeader { schema: EPISEG_SCHEMA.into(), dim: model.weights.len(), c: model.c };
    let text = serde_json::to_string(&header).expect("header serializes");
    fs::write(json_path(stem), text).map_err(|e| ImiliaError::io(json_path(stem), e))?;
    let payload = model.weights.iter().map(|&v| v as f32).chain([model.bias as f32]);
    write_f32_payload(&bin_path(stem), payload)
}

/// Load the epithelium classifier.
pub fn load_episeg(stem: &Path) -> Result<EpiSegModel> {
    let text =
        fs::read_to_string(json_path(stem)).map_err(|e| ImiliaError::io(json_path(stem), e))?;
    let header: EpiSegHeader =
        serde_json::from_str(&text).map_err(|e| ImiliaError::format(json_path(stem), e.to_string()))?;
    if header.schema != EPISEG_SCHEMA {
        return Err(ImiliaError::format(
            json_path(stem),
            format!("schema {:?}, want {EPISEG_SCHEMA:?}", header.schema),
        ));
    }
    let payload = read_f32_payload(&bin_path(stem), header.dim + 1)?;
    Ok(EpiSegModel {
        weights: payload[..header.dim].iter().map(|&v| v as f64).collect(),
        bias: payload[header.dim] as f64,
        c: header.c,
    })
}
