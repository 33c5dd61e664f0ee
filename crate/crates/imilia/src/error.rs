//! Error type shared by the IO layer and the CLI.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImiliaError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("duplicate slide_id {slide_id:?} in {path}")]
    DuplicateSlide { path: PathBuf, slide_id: String },

    #[error("slide {slide_id:?}: non-positive mpp")]
    NonPositiveMpp { slide_id: String },

    #[error("slide {slide_id:?}: unreadable feature container {path}: {message}")]
    UnreadableFeatures { slide_id: String, path: PathBuf, message: String },

    #[error(transparent)]
    Features(#[from] imilia_core::FeatureError),

    #[error(transparent)]
    Train(#[from] imilia_core::chowder::TrainError),

    #[error(transparent)]
    Chowder(#[from] imilia_core::chowder::ChowderError),

    #[error(transparent)]
    Folds(#[from] imilia_core::folds::FoldError),

    #[error(transparent)]
    EpiSeg(#[from] imilia_core::episeg::EpiSegError),

    #[error(transparent)]
    Metrics(#[from] imilia_core::metrics::MetricsError),

    #[error(transparent)]
    Cells(#[from] imilia_core::interpret::CellError),

    #[error(transparent)]
    Preprocess(#[from] imilia_core::preprocess::PreprocessError),

    #[error(transparent)]
    Synth(#[from] imilia_core::synth::SynthError),

    #[error("stage {stage} failed (inputs {digest}): {message}")]
    Stage { stage: String, digest: String, message: String },

    #[error("{0}")]
    Invalid(String),
}

impl ImiliaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ImiliaError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        ImiliaError::Format { path: path.into(), message: message.into() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        ImiliaError::Invalid(message.into())
    }
}

pub type Result<T> = std::result::Result<T, ImiliaError>;
