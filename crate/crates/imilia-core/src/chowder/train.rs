//! Training: stabilized binary cross-entropy, backpropagation through the
//! extreme-tile selection, Adam, per-fold training with checkpoint selection,
//! and k-fold cross-validation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::{sigmoid, ChowderConfig, ChowderError, ChowderModel, Mode, Standardizer, TileView};
use crate::features::Bag;
use crate::folds::FoldAssignment;
use crate::metrics;
use crate::rng::{self, ChaCha8Rng};

/// Numerically stable binary cross-entropy of a logit:
/// `max(z,0) - z*y + ln(1 + exp(-|z|))`.
pub fn bce_loss(logit: f64, label: u8) -> f64 {
    let y = label as f64;
    logit.max(0.0) - logit * y + libm::log1p(libm::exp(-libm::fabs(logit)))
}

/// Gradient of [`bce_loss`] with respect to the logit.
pub fn bce_dlogit(logit: f64, label: u8) -> f64 {
    sigmoid(logit) - label as f64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainError {
    EmptyTrainingSet,
    /// All training labels identical.
    SingleClass,
    MissingLabel { slide_id: String },
    /// A labeled slide is absent from the fold assignment.
    FoldNotAssigned { slide_id: String },
    Model(ChowderError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyTrainingSet => write!(f, "training set is empty"),
            TrainError::SingleClass => write!(f, "training set holds a single class"),
            TrainError::MissingLabel { slide_id } => {
                write!(f, "slide {slide_id:?} has no label")
            }
            TrainError::FoldNotAssigned { slide_id } => {
                write!(f, "labeled slide {slide_id:?} missing from fold assignment")
            }
            TrainError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<ChowderError> for TrainError {
    fn from(e: ChowderError) -> Self {
        TrainError::Model(e)
    }
}

/// Loss and the full parameter gradient (canonical flat order) for one bag.
///
/// The extreme-tile selection is treated as a fixed index set at the current
/// parameters, so the gradient reaches scoring heads only through selected
/// tiles; all other tiles contribute exactly zero.
pub(crate) fn loss_and_grad(
    model: &ChowderModel,
    view: &TileView<'_>,
    label: u8,
    mode: Mode,
    generator: Option<&mut ChaCha8Rng>,
) -> (f64, Vec<f64>) {
    let trace = model.forward_view(view, mode, generator);
    let loss = bce_loss(trace.logit, label);
    let mut grad = vec![0.0; model.param_count()];
    let dlogit = bce_dlogit(trace.logit, label);

    let k_channels = model.channels();
    let dim = model.dim;
    let heads_len = k_channels * (dim + 1);

    // Walk the MLP backwards; dpre holds the gradient w.r.t. the current
    // layer's pre-activation.
    let n_layers = model.layers.len();
    let mut dpre = vec![dlogit];
    let mut dslots: Vec<f64> = Vec::new();
    let mut offset_of_layer = Vec::with_capacity(n_layers);
    {
        let mut off = heads_len;
        for l in &model.layers {
            offset_of_layer.push(off);
            off += l.weights.len() + l.bias.len();
        }
    }
    for li in (0..n_layers).rev() {
        let layer = &model.layers[li];
        let input = &trace.activations[li];
        let off = offset_of_layer[li];
        for o in 0..layer.out_dim {
            let g = dpre[o];
            let wrow = off + o * layer.in_dim;
            for i in 0..layer.in_dim {
                grad[wrow + i] += g * input[i];
            }
            grad[off + layer.out_dim * layer.in_dim + o] += g;
        }
        // Gradient w.r.t. this layer's input.
        let mut dinput = vec![0.0; layer.in_dim];
        for (i, di) in dinput.iter_mut().enumerate() {
            let mut acc = 0.0;
            for o in 0..layer.out_dim {
                acc += dpre[o] * layer.weights[o * layer.in_dim + i];
            }
            *di = acc;
        }
        if li == 0 {
            dslots = dinput;
        } else {
            // Through dropout and the sigmoid of the hidden layer below.
            let sig = &trace.sigmoids[li - 1];
            let mask = &trace.masks[li - 1];
            dpre = dinput
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    let m = mask.as_ref().map_or(1.0, |m| m[i]);
                    d * m * sig[i] * (1.0 - sig[i])
                })
                .collect();
        }
    }

    // Route slot gradients to tile scores; padded slots accumulate onto the
    // repeated tile.
    let r2 = 2 * model.extremes_per_side;
    let mut dscore = vec![0.0; view.n_tiles() * k_channels];
    for (slot, &tile) in trace.selection.tiles.iter().enumerate() {
        let k = slot / r2;
        dscore[tile * k_channels + k] += dslots[slot];
    }

    // Scoring-head gradients through the selected tiles.
    for t in 0..view.n_tiles() {
        let row = view.row(t);
        for k in 0..k_channels {
            let g = dscore[t * k_channels + k];
            if g == 0.0 {
                continue;
            }
            let hoff = k * (dim + 1);
            for (i, &x) in row.iter().enumerate() {
                grad[hoff + i] += g * model.standardized(x, i);
            }
            grad[hoff + dim] += g;
        }
    }
    (loss, grad)
}

/// Spec-level entry point: gradient of the BCE loss for one bag, dropout off.
pub fn backward(
    model: &ChowderModel,
    features: &crate::features::FeatureMatrix,
    label: u8,
) -> Result<(f64, Vec<f64>), ChowderError> {
    model.check_dims(features.dim())?;
    let view = TileView::full(features);
    Ok(loss_and_grad(model, &view, label, Mode::Eval, None))
}

/// Adam optimizer over the model's canonical flat parameter order.
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&mut self, model: &mut ChowderModel, grad: &[f64]) {
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let b1c = 1.0 - libm::pow(self.beta1, self.step as f64);
        let b2c = 1.0 - libm::pow(self.beta2, self.step as f64);
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        model.for_each_param_mut(|i, p| {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / b1c;
            let v_hat = v[i] / b2c;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_auc: Option<f64>,
    pub valid_loss: Option<f64>,
    pub valid_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

fn labels_of(bags: &[&Bag]) -> Result<Vec<u8>, TrainError> {
    bags.iter()
        .map(|b| b.label.ok_or_else(|| TrainError::MissingLabel { slide_id: b.slide_id.clone() }))
        .collect()
}

fn fit_standardizer(bags: &[&Bag], dim: usize) -> Standardizer {
    let mut mean = vec![0.0f64; dim];
    let mut count = 0usize;
    for bag in bags {
        for t in 0..bag.features.n_tiles() {
            for (i, &x) in bag.features.row(t).iter().enumerate() {
                mean[i] += x as f64;
            }
            count += 1;
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; dim];
    for bag in bags {
        for t in 0..bag.features.n_tiles() {
            for (i, &x) in bag.features.row(t).iter().enumerate() {
                let d = x as f64 - mean[i];
                var[i] += d * d;
            }
        }
    }
    let std = var
        .into_iter()
        .map(|v| libm::sqrt(v / count as f64).max(1e-8))
        .collect();
    Standardizer { mean, std }
}

/// Mean loss and, when both classes are present, ROC-AUC over whole bags
/// (all tiles, dropout off).
fn evaluate(model: &ChowderModel, bags: &[&Bag], labels: &[u8]) -> (f64, Option<f64>) {
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(bags.len());
    for (bag, &label) in bags.iter().zip(labels) {
        let trace = model.forward_view(&TileView::full(&bag.features), Mode::Eval, None);
        loss += bce_loss(trace.logit, label);
        probs.push(sigmoid(trace.logit));
    }
    loss /= bags.len() as f64;
    let auc = metrics::roc_auc(&probs, labels).ok();
    (loss, auc)
}

/// Train one model on `train`, monitoring `valid` each epoch and returning
/// the parameters of the best epoch.
///
/// Checkpoint choice: highest validation AUC; if the validation set cannot
/// yield an AUC (single class), lowest validation loss; without a validation
/// set, the final epoch. Ties keep the earlier epoch. Deterministic for a
/// fixed `cfg.seed`.
pub fn train_fold(
    train: &[&Bag],
    valid: &[&Bag],
    cfg: &ChowderConfig,
) -> Result<(ChowderModel, TrainLog), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let train_labels = labels_of(train)?;
    let valid_labels = labels_of(valid)?;
    if !(train_labels.contains(&0) && train_labels.contains(&1)) {
        return Err(TrainError::SingleClass);
    }
    let dim = train[0].features.dim();
    for bag in train.iter().chain(valid.iter()) {
        if bag.features.dim() != dim {
            return Err(ChowderError::DimMismatch { expected: dim, actual: bag.features.dim() }
                .into());
        }
    }

    let mut generator = rng::rng_from_seed(cfg.seed);
    let mut model = ChowderModel::init(cfg, dim, &mut generator);
    if cfg.standardize {
        model.standardizer = Some(fit_standardizer(train, dim));
    }
    let mut adam = Adam::new(cfg.learning_rate, model.param_count());

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.n_epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for epoch in 0..cfg.n_epochs {
        rng::shuffle(&mut generator, &mut order);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc = vec![0.0; model.param_count()];
            for &si in batch {
                let bag = train[si];
                let label = train_labels[si];
                let n = bag.features.n_tiles();
                let (_, grad) = if n > cfg.max_tiles {
                    let rows = rng::sample_indices(&mut generator, n, cfg.max_tiles);
                    let view = TileView::subset(&bag.features, &rows);
                    loss_and_grad(&model, &view, label, Mode::Train, Some(&mut generator))
                } else {
                    let view = TileView::full(&bag.features);
                    loss_and_grad(&model, &view, label, Mode::Train, Some(&mut generator))
                };
                for (a, g) in grad_acc.iter_mut().zip(&grad) {
                    *a += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in grad_acc.iter_mut() {
                *a *= scale;
            }
            adam.step(&mut model, &grad_acc);
        }

        let (train_loss, train_auc) = evaluate(&model, train, &train_labels);
        let (valid_loss, valid_auc) = if valid.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&model, valid, &valid_labels);
            (Some(l), a)
        };
        epochs.push(EpochStats { epoch, train_loss, train_auc, valid_loss, valid_auc });

        let key = match (valid_auc, valid_loss) {
            (Some(auc), _) => Some(auc),
            (None, Some(loss)) => Some(-loss),
            (None, None) => None,
        };
        if let Some(k) = key {
            let improved = best.as_ref().map_or(true, |(bk, _, _)| k > *bk);
            if improved {
                best = Some((k, epoch, model.flatten()));
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.load_flat(&params);
            epoch
        }
        None => cfg.n_epochs - 1,
    };
    Ok((model, TrainLog { epochs, best_epoch }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OofPrediction {
    pub slide_id: String,
    pub fold: usize,
    pub probability: f64,
    pub label: u8,
}

#[derive(Debug)]
pub struct CvOutcome {
    pub models: Vec<ChowderModel>,
    pub logs: Vec<TrainLog>,
    pub oof: Vec<OofPrediction>,
}

/// K-fold cross-validation: one model per fold, trained with that fold held
/// out, with out-of-fold predictions assembled for every labeled slide.
///
/// Fold `f` trains with seed `derive_seed(cfg.seed, f)`, so folds are
/// independent and may be trained in parallel without changing results.
pub fn cross_validate(
    dataset: &[Bag],
    folds: &FoldAssignment,
    cfg: &ChowderConfig,
) -> Result<CvOutcome, TrainError> {
    let labeled: Vec<&Bag> = dataset.iter().filter(|b| b.label.is_some()).collect();
    for bag in &labeled {
        if folds.fold_of(&bag.slide_id).is_none() {
            return Err(TrainError::FoldNotAssigned { slide_id: bag.slide_id.clone() });
        }
    }

    let mut models = Vec::with_capacity(folds.n_folds);
    let mut logs = Vec::with_capacity(folds.n_folds);
    let mut oof = Vec::with_capacity(labeled.len());
    for fold in 0..folds.n_folds {
        let train: Vec<&Bag> = labeled
            .iter()
            .copied()
            .filter(|b| folds.fold_of(&b.slide_id) != Some(fold))
            .collect();
        let valid: Vec<&Bag> = labeled
            .iter()
            .copied()
            .filter(|b| folds.fold_of(&b.slide_id) == Some(fold))
            .collect();
        let fold_cfg = ChowderConfig { seed: rng::derive_seed(cfg.seed, fold as u64), ..cfg.clone() };
        let (model, log) = train_fold(&train, &valid, &fold_cfg)?;
        for bag in &valid {
            let trace = model.forward_view(&TileView::full(&bag.features), Mode::Eval, None);
            oof.push(OofPrediction {
                slide_id: bag.slide_id.clone(),
                fold,
                probability: sigmoid(trace.logit),
                label: bag.label.unwrap(),
            });
        }
        models.push(model);
        logs.push(log);
    }
    oof.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
    Ok(CvOutcome { models, logs, oof })
}
