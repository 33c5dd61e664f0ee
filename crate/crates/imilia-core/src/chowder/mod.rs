//! Multi-channel extreme-tile MIL classifier.
//!
//! Each slide is a bag of tile embeddings `W` (`n_tiles x d`). K parallel
//! linear heads score every tile; per channel the r highest and r lowest
//! scores are kept (highest group sorted descending, lowest ascending),
//! concatenated across channels, and fed to a small MLP that emits the slide
//! logit. Training treats the selected index set as fixed at the current
//! parameters, so gradients flow only through extreme tiles.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::features::FeatureMatrix;
use crate::rng::{self, ChaCha8Rng};

mod ensemble;
mod train;

pub use ensemble::{
    ensemble_predict, extract_extremes, score_slide, ExtremeTile, ModelId, ScoreRow, Side,
    SlidePrediction,
};
pub use train::{
    backward, bce_dlogit, bce_loss, cross_validate, train_fold, Adam, CvOutcome, EpochStats,
    OofPrediction, TrainError, TrainLog,
};

/// Hyperparameters of the classifier and its training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct ChowderConfig {
    /// Number of parallel scoring heads (K).
    pub channels: usize,
    /// Extreme tiles kept per side per channel (r).
    pub extremes_per_side: usize,
    pub mlp_hidden: Vec<usize>,
    /// Dropout probability per hidden layer, applied in training mode only.
    pub mlp_dropout: Vec<f64>,
    pub learning_rate: f64,
    /// Slides per optimizer step.
    pub batch_size: usize,
    /// Per-slide tile cap during training; tiles are resampled every epoch.
    /// Inference always uses all tiles.
    pub max_tiles: usize,
    pub n_epochs: usize,
    pub seed: u64,
    /// Optional per-dimension standardization fitted on the training tiles.
    pub standardize: bool,
}

impl Default for ChowderConfig {
    fn default() -> Self {
        Self {
            channels: 5,
            extremes_per_side: 25,
            mlp_hidden: vec![128, 64],
            mlp_dropout: vec![0.5, 0.5],
            learning_rate: 0.01,
            batch_size: 256,
            max_tiles: 1000,
            n_epochs: 30,
            seed: 0,
            standardize: false,
        }
    }
}

impl ChowderConfig {
    pub fn validate(&self) -> Result<(), ChowderError> {
        if self.channels == 0 {
            return Err(ChowderError::Config("channels must be >= 1"));
        }
        if self.extremes_per_side == 0 {
            return Err(ChowderError::Config("extremes_per_side must be >= 1"));
        }
        if self.mlp_dropout.len() != self.mlp_hidden.len() {
            return Err(ChowderError::Config("mlp_dropout must align with mlp_hidden"));
        }
        if self.mlp_dropout.iter().any(|&p| !(0.0..1.0).contains(&p)) {
            return Err(ChowderError::Config("dropout probabilities must lie in [0,1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ChowderError::Config("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.max_tiles == 0 || self.n_epochs == 0 {
            return Err(ChowderError::Config("batch_size, max_tiles, n_epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChowderError {
    DimMismatch { expected: usize, actual: usize },
    EmptyModelList,
    ModelsDisagree,
    Config(&'static str),
}

impl fmt::Display for ChowderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChowderError::DimMismatch { expected, actual } => {
                write!(f, "embedding dim {actual} does not match model dim {expected}")
            }
            ChowderError::EmptyModelList => write!(f, "ensemble needs at least one model"),
            ChowderError::ModelsDisagree => write!(f, "ensemble members have different shapes"),
            ChowderError::Config(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl core::error::Error for ChowderError {}

/// One per-tile linear scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Dense layer, weights row-major `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn init(in_dim: usize, out_dim: usize, generator: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / libm::sqrt(in_dim as f64);
        let weights = (0..in_dim * out_dim)
            .map(|_| (2.0 * rng::uniform_f64(generator) - 1.0) * bound)
            .collect();
        let bias = (0..out_dim)
            .map(|_| (2.0 * rng::uniform_f64(generator) - 1.0) * bound)
            .collect();
        Self { in_dim, out_dim, weights, bias }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

/// Per-dimension standardization fitted on training tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Forward mode: dropout fires only in `Train`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Trained (or freshly initialized) classifier parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ChowderModel {
    pub dim: usize,
    pub extremes_per_side: usize,
    pub mlp_dropout: Vec<f64>,
    pub heads: Vec<Head>,
    pub layers: Vec<DenseLayer>,
    pub standardizer: Option<Standardizer>,
}

/// Slide logit plus the raw per-tile scores (`n_tiles x K`, tile-major).
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logit: f64,
    pub scores: Vec<f64>,
}

impl ChowderModel {
    pub fn init(cfg: &ChowderConfig, dim: usize, generator: &mut ChaCha8Rng) -> Self {
        let heads = (0..cfg.channels)
            .map(|_| {
                let bound = 1.0 / libm::sqrt(dim as f64);
                let weights = (0..dim)
                    .map(|_| (2.0 * rng::uniform_f64(generator) - 1.0) * bound)
                    .collect();
                let bias = (2.0 * rng::uniform_f64(generator) - 1.0) * bound;
                Head { weights, bias }
            })
            .collect();
        let mut layers = Vec::new();
        let mut in_dim = 2 * cfg.extremes_per_side * cfg.channels;
        for &h in &cfg.mlp_hidden {
            layers.push(DenseLayer::init(in_dim, h, generator));
            in_dim = h;
        }
        layers.push(DenseLayer::init(in_dim, 1, generator));
        Self {
            dim,
            extremes_per_side: cfg.extremes_per_side,
            mlp_dropout: cfg.mlp_dropout.clone(),
            heads,
            layers,
            standardizer: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.heads.len()
    }

    /// MLP input width: 2 * r * K.
    pub fn mlp_input_dim(&self) -> usize {
        2 * self.extremes_per_side * self.channels()
    }

    pub fn param_count(&self) -> usize {
        let head_params = self.heads.len() * (self.dim + 1);
        let layer_params: usize =
            self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        head_params + layer_params
    }

    /// All parameters in canonical order: heads (weights then bias, channel by
    /// channel), then layers (weights then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for h in &self.heads {
            out.extend_from_slice(&h.weights);
            out.push(h.bias);
        }
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Overwrite parameters from a flat vector in canonical order.
    pub fn load_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut it = params.iter();
        for h in &mut self.heads {
            for w in &mut h.weights {
                *w = *it.next().unwrap();
            }
            h.bias = *it.next().unwrap();
        }
        for l in &mut self.layers {
            for w in &mut l.weights {
                *w = *it.next().unwrap();
            }
            for b in &mut l.bias {
                *b = *it.next().unwrap();
            }
        }
    }

    /// Visit parameters mutably in canonical order.
    pub(crate) fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut i = 0;
        for h in &mut self.heads {
            for w in &mut h.weights {
                f(i, w);
                i += 1;
            }
            f(i, &mut h.bias);
            i += 1;
        }
        for l in &mut self.layers {
            for w in &mut l.weights {
                f(i, w);
                i += 1;
            }
            for b in &mut l.bias {
                f(i, b);
                i += 1;
            }
        }
    }

    fn standardized(&self, x: f32, dim_index: usize) -> f64 {
        match &self.standardizer {
            None => x as f64,
            Some(s) => (x as f64 - s.mean[dim_index]) / s.std[dim_index],
        }
    }

    /// Score one tile row with head `k`.
    fn head_score(&self, k: usize, row: &[f32]) -> f64 {
        let head = &self.heads[k];
        let mut acc = head.bias;
        for (i, (&w, &x)) in head.weights.iter().zip(row).enumerate() {
            acc += w * self.standardized(x, i);
        }
        acc
    }

    /// Per-tile scores for the view, tile-major (`scores[t * K + k]`).
    fn tile_scores(&self, view: &TileView<'_>) -> Vec<f64> {
        let k_channels = self.channels();
        let mut scores = Vec::with_capacity(view.n_tiles() * k_channels);
        for t in 0..view.n_tiles() {
            let row = view.row(t);
            for k in 0..k_channels {
                scores.push(self.head_score(k, row));
            }
        }
        scores
    }

    /// Slide logit and all tile scores. `generator` feeds the dropout masks
    /// and is only consulted in `Mode::Train`.
    pub fn forward(
        &self,
        features: &FeatureMatrix,
        mode: Mode,
        generator: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput, ChowderError> {
        let view = TileView::full(features);
        self.check_dims(features.dim())?;
        let trace = self.forward_view(&view, mode, generator);
        Ok(ForwardOutput { logit: trace.logit, scores: trace.scores })
    }

    pub(crate) fn check_dims(&self, dim: usize) -> Result<(), ChowderError> {
        if dim != self.dim {
            return Err(ChowderError::DimMismatch { expected: self.dim, actual: dim });
        }
        Ok(())
    }

    pub(crate) fn forward_view(
        &self,
        view: &TileView<'_>,
        mode: Mode,
        mut generator: Option<&mut ChaCha8Rng>,
    ) -> Trace {
        let k_channels = self.channels();
        let r = self.extremes_per_side;
        let scores = self.tile_scores(view);
        let selection = select_extremes(&scores, view.n_tiles(), k_channels, r);

        // MLP over the selected score vector.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut sigmoids: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() - 1);
        let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.layers.len() - 1);
        activations.push(selection.values.clone());
        let n_hidden = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::new();
            layer.forward(activations.last().unwrap(), &mut pre);
            if li == n_hidden {
                // Output layer: linear logit.
                let logit = pre[0];
                return Trace { logit, scores, selection, activations, sigmoids, masks };
            }
            let sig: Vec<f64> = pre.iter().map(|&z| sigmoid(z)).collect();
            let p = self.mlp_dropout.get(li).copied().unwrap_or(0.0);
            let mask = if mode == Mode::Train && p > 0.0 {
                let g = generator
                    .as_deref_mut()
                    .expect("training-mode forward needs a generator for dropout");
                let keep = 1.0 / (1.0 - p);
                Some(
                    (0..sig.len())
                        .map(|_| if rng::uniform_f64(g) < p { 0.0 } else { keep })
                        .collect::<Vec<f64>>(),
                )
            } else {
                None
            };
            let post: Vec<f64> = match &mask {
                Some(m) => sig.iter().zip(m).map(|(&s, &f)| s * f).collect(),
                None => sig.clone(),
            };
            sigmoids.push(sig);
            masks.push(mask);
            activations.push(post);
        }
        unreachable!("layer loop always returns at the output layer")
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Borrowed view of a feature matrix, optionally restricted to a row subset.
pub(crate) struct TileView<'a> {
    matrix: &'a FeatureMatrix,
    rows: Option<&'a [usize]>,
}

impl<'a> TileView<'a> {
    pub(crate) fn full(matrix: &'a FeatureMatrix) -> Self {
        Self { matrix, rows: None }
    }

    pub(crate) fn subset(matrix: &'a FeatureMatrix, rows: &'a [usize]) -> Self {
        Self { matrix, rows: Some(rows) }
    }

    pub(crate) fn n_tiles(&self) -> usize {
        match self.rows {
            Some(rows) => rows.len(),
            None => self.matrix.n_tiles(),
        }
    }

    pub(crate) fn row(&self, i: usize) -> &[f32] {
        match self.rows {
            Some(rows) => self.matrix.row(rows[i]),
            None => self.matrix.row(i),
        }
    }
}

/// Extreme-score selection: per channel the r max scores (descending) then
/// the r min scores (ascending); channels concatenated.
#[derive(Clone, Debug)]
pub(crate) struct Selection {
    /// Tile index feeding each slot, `2 * r * K` entries, channel-major.
    pub tiles: Vec<usize>,
    /// Slot values, aligned with `tiles`; this is the MLP input.
    pub values: Vec<f64>,
}

/// Selection over tile-major scores (`scores[t * K + k]`).
///
/// Ties break toward the lower tile index. Sides are selected independently:
/// with fewer than r tiles each side repeats its most extreme score to keep
/// the slot count fixed (with r <= n < 2r the sides overlap naturally).
pub(crate) fn select_extremes(
    scores: &[f64],
    n_tiles: usize,
    k_channels: usize,
    r: usize,
) -> Selection {
    let mut tiles = Vec::with_capacity(2 * r * k_channels);
    let mut values = Vec::with_capacity(2 * r * k_channels);
    let mut order: Vec<usize> = Vec::with_capacity(n_tiles);
    for k in 0..k_channels {
        let score_of = |t: usize| scores[t * k_channels + k];

        order.clear();
        order.extend(0..n_tiles);
        order.sort_unstable_by(|&a, &b| {
            score_of(b).partial_cmp(&score_of(a)).expect("finite scores").then(a.cmp(&b))
        });
        push_side(&order, &score_of, r, &mut tiles, &mut values);

        order.clear();
        order.extend(0..n_tiles);
        order.sort_unstable_by(|&a, &b| {
            score_of(a).partial_cmp(&score_of(b)).expect("finite scores").then(a.cmp(&b))
        });
        push_side(&order, &score_of, r, &mut tiles, &mut values);
    }
    Selection { tiles, values }
}

fn push_side(
    order: &[usize],
    score_of: &impl Fn(usize) -> f64,
    r: usize,
    tiles: &mut Vec<usize>,
    values: &mut Vec<f64>,
) {
    let take = r.min(order.len());
    for &t in &order[..take] {
        tiles.push(t);
        values.push(score_of(t));
    }
    // Degenerate bags: repeat the most extreme available entry.
    for _ in take..r {
        tiles.push(order[0]);
        values.push(score_of(order[0]));
    }
}

/// Full forward trace kept for backpropagation.
pub(crate) struct Trace {
    pub logit: f64,
    pub scores: Vec<f64>,
    pub selection: Selection,
    /// Layer inputs: selection values, then each hidden layer's post-dropout
    /// output.
    pub activations: Vec<Vec<f64>>,
    /// Hidden sigmoid outputs before dropout.
    pub sigmoids: Vec<Vec<f64>>,
    /// Dropout multipliers per hidden layer (None when inactive).
    pub masks: Vec<Option<Vec<f64>>>,
}
