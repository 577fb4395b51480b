//! Pretraining replicas, scaffold splitting, fine-tuning under each fusion
//! mode, sensitivity analysis and evaluation metrics.

mod finetune;
mod manifest;
mod metrics;
mod pretrain;
mod sensitivity;
mod split;
mod synthetic;

use thiserror::Error;

use crate::chem::ChemError;
use crate::encoders::EncoderError;
use crate::fusion::FusionError;
use crate::losses::LossError;
use crate::numeric::NumericError;
use crate::similarity::SimilarityError;

pub use finetune::{
    evaluate_predictions, finetune, read_labels, read_predictions, write_predictions, FinetuneConfig, FinetuneReport, FinetunedModel, FusionMode,
    PredictionRow, TaskKind,
};
pub use manifest::{content_hash, InputRecord, RunManifest};
pub use metrics::{multitask_metric, pearson, rmse, roc_auc, Metric, MetricKind};
pub use pretrain::{
    load_pretrained, pretrain, save_pretrained, Objective, PretrainConfig, PretrainRun, TargetScope, ENCODER_PREFIX,
};
pub use sensitivity::{
    ridge_fit, sensitivity_analysis, sensitivity_from_features, SensitivityReport, Strategy, DEFAULT_GAIN_THRESHOLD, RIDGE_LAMBDA,
};
pub use split::{scaffold_keys, scaffold_split, Partition, SplitAssignment, SplitRatios};
pub use synthetic::{planted_labels, random_smiles, synthetic_corpus, synthetic_ppm, SyntheticConfig, SyntheticCorpus};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("split: {0}")]
    Split(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Independent stream for one named component of a seeded run.
pub(crate) fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h = crate::hash::StableHasher::new();
    h.write(seed).write_bytes(name.as_bytes());
    h.finish()
}
