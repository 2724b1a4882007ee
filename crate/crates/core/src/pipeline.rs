//! End-to-end training pipeline: stratified split, vocabulary build,
//! feature selection on the training half, one model per requested kind,
//! evaluation on the held-out test half, and best-model selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{
    evaluate, select_best, train, ClassifierError, Dataset, EvalReport, Hyperparams, ModelKind,
    TrainedModel, DEFAULT_DECISION_THRESHOLD,
};
use crate::corpus::{corpus_hash, split_corpus, subset, Corpus, CorpusError, DataSplit};
use crate::evaluator::{ModelBundle, TrainingMetadata};
use crate::features::{build_vocabulary, select_features, FeatureError};

pub const DEFAULT_TOP_K_FEATURES: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("selected model {0} missing from trained set")]
    MissingModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub train_fraction: f64,
    pub seed: u64,
    pub kinds: Vec<ModelKind>,
    pub hyperparams: Hyperparams,
    pub top_k_features: usize,
    pub decision_threshold: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            kinds: ModelKind::ALL.to_vec(),
            hyperparams: Hyperparams::default(),
            top_k_features: DEFAULT_TOP_K_FEATURES,
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
        }
    }
}

/// Test-split evaluation of one trained kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEntry {
    pub kind: ModelKind,
    pub report: EvalReport,
}

pub struct TrainingOutcome {
    pub split: DataSplit,
    pub models: Vec<TrainedModel>,
    pub entries: Vec<PipelineEntry>,
    pub selected_model_id: String,
    /// The winning model packaged for the central store.
    pub selected_bundle: ModelBundle,
}

/// Runs the full evaluation plan over a labeled corpus.
pub fn run_training_pipeline(
    corpus: &Corpus,
    options: &TrainOptions,
) -> Result<TrainingOutcome, PipelineError> {
    let split = split_corpus(corpus, options.train_fraction, options.seed)?;
    let train_corpus = subset(corpus, &split.train_ids)?;
    let test_corpus = subset(corpus, &split.test_ids)?;

    // vocabulary and feature selection see only the training half
    let full_vocab = build_vocabulary(&train_corpus);
    let train_full = Dataset::from_corpus(&train_corpus, &full_vocab);
    let vocab = select_features(
        train_full.vectors(),
        train_full.labels(),
        options.top_k_features,
        &full_vocab,
    )?;
    let train_data = Dataset::from_corpus(&train_corpus, &vocab);
    let test_data = Dataset::from_corpus(&test_corpus, &vocab);

    let mut models = Vec::new();
    let mut entries = Vec::new();
    for &kind in &options.kinds {
        let model = train(
            &train_data,
            kind,
            &options.hyperparams,
            options.seed,
            &vocab,
        )?;
        let report = evaluate(&model, &test_data, options.decision_threshold)?;
        entries.push(PipelineEntry { kind, report });
        models.push(model);
    }

    let reports: Vec<EvalReport> = entries.iter().map(|e| e.report.clone()).collect();
    let selected_model_id = select_best(&reports)?.to_string();
    let (selected, selected_report) = models
        .iter()
        .zip(&reports)
        .find(|(m, _)| m.model_id == selected_model_id)
        .ok_or_else(|| PipelineError::MissingModel(selected_model_id.clone()))?;

    let selected_bundle = ModelBundle::new(
        selected.clone(),
        TrainingMetadata {
            seed: options.seed,
            corpus_hash: corpus_hash(corpus),
            eval: selected_report.clone(),
        },
    );

    Ok(TrainingOutcome {
        split,
        models,
        entries,
        selected_model_id,
        selected_bundle,
    })
}
