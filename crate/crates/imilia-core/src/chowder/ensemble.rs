//! Fold-model ensembling and cohort-wide extreme-tile extraction.
//!
//! Ensembling averages member outputs: the slide probability is the mean of
//! per-model sigmoids, and each (tile, channel) score is the mean of the
//! per-model scores.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{sigmoid, ChowderError, ChowderModel, Mode};
use crate::features::FeatureMatrix;

/// Which fold model produced a score row, or the ensemble average.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelId {
    Fold(usize),
    Ensemble,
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Fold(k) => write!(f, "{k}"),
            ModelId::Ensemble => write!(f, "ensemble"),
        }
    }
}

/// Extreme-tile side: low scores carry negative evidence, high scores
/// positive evidence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    Min,
    Max,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Min => write!(f, "min"),
            Side::Max => write!(f, "max"),
        }
    }
}

impl core::str::FromStr for Side {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "min" => Ok(Side::Min),
            "max" => Ok(Side::Max),
            _ => Err(()),
        }
    }
}

/// One row of the tile score table.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub slide_id: String,
    pub tile_id: String,
    pub channel: usize,
    pub model: ModelId,
    pub score: f64,
}

/// Ensemble probability for a slide, with the per-model probabilities kept
/// for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub probability: f64,
    pub per_model: Vec<f64>,
}

/// Ensemble forward pass over one slide: mean of per-model sigmoid
/// probabilities and mean per-(tile, channel) scores, dropout off.
pub fn ensemble_predict(
    models: &[ChowderModel],
    features: &FeatureMatrix,
) -> Result<(f64, Vec<f64>), ChowderError> {
    if models.is_empty() {
        return Err(ChowderError::EmptyModelList);
    }
    let dim = models[0].dim;
    let channels = models[0].channels();
    for m in models {
        if m.dim != dim || m.channels() != channels {
            return Err(ChowderError::ModelsDisagree);
        }
    }
    models[0].check_dims(features.dim())?;

    let mut prob_sum = 0.0;
    let mut score_sum = alloc::vec![0.0f64; features.n_tiles() * channels];
    for model in models {
        let out = model.forward(features, Mode::Eval, None)?;
        prob_sum += sigmoid(out.logit);
        for (acc, s) in score_sum.iter_mut().zip(&out.scores) {
            *acc += s;
        }
    }
    let inv = 1.0 / models.len() as f64;
    for s in score_sum.iter_mut() {
        *s *= inv;
    }
    Ok((prob_sum * inv, score_sum))
}

/// Score one slide with every fold model plus the ensemble, producing the
/// full score table block and the slide prediction.
pub fn score_slide(
    models: &[ChowderModel],
    slide_id: &str,
    features: &FeatureMatrix,
) -> Result<(SlidePrediction, Vec<ScoreRow>), ChowderError> {
    if models.is_empty() {
        return Err(ChowderError::EmptyModelList);
    }
    let channels = models[0].channels();
    let n_tiles = features.n_tiles();
    let mut rows = Vec::with_capacity(n_tiles * channels * (models.len() + 1));
    let mut per_model = Vec::with_capacity(models.len());
    let mut ensemble_scores = alloc::vec![0.0f64; n_tiles * channels];
    for (mi, model) in models.iter().enumerate() {
        if model.channels() != channels {
            return Err(ChowderError::ModelsDisagree);
        }
        let out = model.forward(features, Mode::Eval, None)?;
        per_model.push(sigmoid(out.logit));
        for t in 0..n_tiles {
            for k in 0..channels {
                let score = out.scores[t * channels + k];
                ensemble_scores[t * channels + k] += score;
                rows.push(ScoreRow {
                    slide_id: slide_id.into(),
                    tile_id: features.tile_id(t).into(),
                    channel: k,
                    model: ModelId::Fold(mi),
                    score,
                });
            }
        }
    }
    let inv = 1.0 / models.len() as f64;
    for t in 0..n_tiles {
        for k in 0..channels {
            rows.push(ScoreRow {
                slide_id: slide_id.into(),
                tile_id: features.tile_id(t).into(),
                channel: k,
                model: ModelId::Ensemble,
                score: ensemble_scores[t * channels + k] * inv,
            });
        }
    }
    let probability = per_model.iter().sum::<f64>() * inv;
    Ok((SlidePrediction { slide_id: slide_id.into(), probability, per_model }, rows))
}

/// A cohort-wide extreme tile: per-tile score is the mean over channels of
/// the ensemble scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremeTile {
    pub slide_id: String,
    pub tile_id: String,
    pub score: f64,
}

/// Cohort-wide top-`n` (or bottom-`n`) tiles by ensemble score averaged over
/// channels; at most one entry per tile.
///
/// Boundary ties go to the lexicographically smallest `(slide_id, tile_id)`.
/// Returns `(tiles, truncated)`; `truncated` is true when fewer than `n`
/// tiles were available and everything was returned.
pub fn extract_extremes(rows: &[ScoreRow], n: usize, side: Side) -> (Vec<ExtremeTile>, bool) {
    use alloc::collections::BTreeMap;

    let mut per_tile: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
    for row in rows {
        if row.model != ModelId::Ensemble {
            continue;
        }
        let entry = per_tile.entry((&row.slide_id, &row.tile_id)).or_insert((0.0, 0));
        entry.0 += row.score;
        entry.1 += 1;
    }
    let mut tiles: Vec<ExtremeTile> = per_tile
        .into_iter()
        .map(|((slide, tile), (sum, count))| ExtremeTile {
            slide_id: slide.into(),
            tile_id: tile.into(),
            score: sum / count as f64,
        })
        .collect();
    tiles.sort_by(|a, b| {
        let by_score = match side {
            Side::Max => b.score.partial_cmp(&a.score),
            Side::Min => a.score.partial_cmp(&b.score),
        }
        .expect("finite scores");
        by_score
            .then_with(|| a.slide_id.cmp(&b.slide_id))
            .then_with(|| a.tile_id.cmp(&b.tile_id))
    });
    let truncated = n > tiles.len();
    tiles.truncate(n);
    (tiles, truncated)
}
