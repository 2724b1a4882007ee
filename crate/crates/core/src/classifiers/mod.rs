//! From-scratch classifier suite over binary manifest features.
//!
//! Four model kinds share one training entry point and one `[0, 1]` scoring
//! interface:
//!
//! * `naive_bayes`: Bernoulli Naive Bayes, closed-form counts with Laplace
//!   smoothing (alpha = 1).
//! * `svm_sdca`: linear SVM trained by stochastic dual coordinate ascent
//!   on the hinge loss.
//! * `kmeans`: Lloyd's algorithm with k-means++ seeding; clusters score as
//!   their training malicious fraction.
//! * `boosted_stumps`: AdaBoost over decision stumps on single feature
//!   bits.
//!
//! Training is bit-reproducible given `(data, hyperparams, seed)`.

mod kmeans;
mod naive_bayes;
mod stumps;
mod svm;

pub use kmeans::{train_kmeans, KMeansConfig, KMeansParams, KMeansTrace};
pub use naive_bayes::{train_naive_bayes, NaiveBayesParams};
pub use stumps::{train_stumps, Stump, StumpsConfig, StumpsParams};
pub use svm::{train_svm_sdca, SdcaOutcome, SvmConfig, SvmParams};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Label;
use crate::features::{FeatureVector, Vocabulary};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training a {0} model requires both classes")]
    InsufficientClasses(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input vector was encoded against a different vocabulary than the model")]
    VocabMismatch,
    #[error("no reports to select from")]
    EmptyInput,
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
}

/// Aligned feature vectors and labels with a uniform vector length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    vectors: Vec<FeatureVector>,
    labels: Vec<Label>,
}

impl Dataset {
    pub fn new(vectors: Vec<FeatureVector>, labels: Vec<Label>) -> Result<Self, ClassifierError> {
        if vectors.len() != labels.len() {
            return Err(ClassifierError::Inconsistent(format!(
                "{} vectors vs {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        if let Some(first) = vectors.first() {
            if vectors
                .iter()
                .any(|v| v.bits.len() != first.bits.len() || v.vocab_hash != first.vocab_hash)
            {
                return Err(ClassifierError::Inconsistent(
                    "vectors differ in length or vocabulary".into(),
                ));
            }
        }
        Ok(Self { vectors, labels })
    }

    /// Encodes every corpus manifest against `vocab`.
    pub fn from_corpus(corpus: &crate::corpus::Corpus, vocab: &Vocabulary) -> Self {
        let mut vectors = Vec::with_capacity(corpus.len());
        let mut labels = Vec::with_capacity(corpus.len());
        for (manifest, label) in corpus.entries() {
            vectors.push(crate::features::extract_features(manifest, vocab));
            labels.push(label.label);
        }
        Self { vectors, labels }
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.bits.len())
    }

    pub fn has_both_classes(&self) -> bool {
        let malicious = self.labels.iter().filter(|l| l.is_malicious()).count();
        malicious > 0 && malicious < self.labels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NaiveBayes,
    SvmSdca,
    #[serde(rename = "kmeans")]
    KMeans,
    BoostedStumps,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::NaiveBayes,
        ModelKind::SvmSdca,
        ModelKind::KMeans,
        ModelKind::BoostedStumps,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::SvmSdca => "svm_sdca",
            ModelKind::KMeans => "kmeans",
            ModelKind::BoostedStumps => "boosted_stumps",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive_bayes" => Ok(ModelKind::NaiveBayes),
            "svm_sdca" => Ok(ModelKind::SvmSdca),
            "kmeans" => Ok(ModelKind::KMeans),
            "boosted_stumps" => Ok(ModelKind::BoostedStumps),
            other => Err(format!("unknown classifier kind {other:?}")),
        }
    }
}

/// Kind-specific parameters; serializes as `"kind": ..., "parameters": ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum ModelParams {
    NaiveBayes(NaiveBayesParams),
    SvmSdca(SvmParams),
    #[serde(rename = "kmeans")]
    KMeans(KMeansParams),
    BoostedStumps(StumpsParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::NaiveBayes(_) => ModelKind::NaiveBayes,
            ModelParams::SvmSdca(_) => ModelKind::SvmSdca,
            ModelParams::KMeans(_) => ModelKind::KMeans,
            ModelParams::BoostedStumps(_) => ModelKind::BoostedStumps,
        }
    }

    /// Feature dimension the parameters were trained for, if the kind
    /// encodes one explicitly.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ModelParams::NaiveBayes(p) => Some(p.log_feature_one[0].len()),
            ModelParams::SvmSdca(p) => Some(p.weights.len()),
            ModelParams::KMeans(p) => p.centroids.first().map(Vec::len),
            ModelParams::BoostedStumps(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model_id: String,
    #[serde(flatten)]
    pub params: ModelParams,
    pub vocab: Vocabulary,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }
}

/// Hyperparameters for all trainable kinds. Defaults match the shipped
/// configuration; Naive Bayes has none.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub svm: SvmConfig,
    pub kmeans: KMeansConfig,
    pub stumps: StumpsConfig,
}

fn model_id(kind: ModelKind, seed: u64, data: &Dataset, vocab_hash: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_str().as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update((data.len() as u64).to_le_bytes());
    hasher.update((data.dim() as u64).to_le_bytes());
    hasher.update(vocab_hash.as_bytes());
    let digest = hasher.finalize();
    let mut tag = String::with_capacity(12);
    for byte in &digest[..6] {
        tag.push_str(&format!("{byte:02x}"));
    }
    format!("{}-{tag}", kind.as_str())
}

/// Trains one model of the requested kind. Deterministic for
/// `(data, kind, hyperparams, seed)`.
pub fn train(
    data: &Dataset,
    kind: ModelKind,
    hyperparams: &Hyperparams,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<TrainedModel, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if kind != ModelKind::KMeans && !data.has_both_classes() {
        return Err(ClassifierError::InsufficientClasses(kind.as_str()));
    }
    let params = match kind {
        ModelKind::NaiveBayes => ModelParams::NaiveBayes(train_naive_bayes(data)),
        ModelKind::SvmSdca => {
            ModelParams::SvmSdca(train_svm_sdca(data, &hyperparams.svm, seed).params)
        }
        ModelKind::KMeans => ModelParams::KMeans(train_kmeans(data, &hyperparams.kmeans, seed)?.0),
        ModelKind::BoostedStumps => {
            ModelParams::BoostedStumps(train_stumps(data, &hyperparams.stumps))
        }
    };
    Ok(TrainedModel {
        model_id: model_id(kind, seed, data, vocab.content_hash()),
        params,
        vocab: vocab.clone(),
    })
}

/// Malicious-class score in `[0, 1]` for one feature vector.
pub fn predict_score(model: &TrainedModel, x: &FeatureVector) -> Result<f64, ClassifierError> {
    if !x.matches(&model.vocab) {
        return Err(ClassifierError::VocabMismatch);
    }
    Ok(match &model.params {
        ModelParams::NaiveBayes(p) => p.score(&x.bits),
        ModelParams::SvmSdca(p) => p.score(&x.bits),
        ModelParams::KMeans(p) => p.score(&x.bits),
        ModelParams::BoostedStumps(p) => p.score(&x.bits),
    })
}

/// Logistic squashing used by the margin-based kinds.
pub(crate) fn logistic(margin: f64) -> f64 {
    1.0 / (1.0 + (-margin).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// False alarm rate fp / (fp + tn); defined as 0 when there are no
    /// benign instances.
    pub fn false_alarm_rate(&self) -> f64 {
        let benign = self.fp + self.tn;
        if benign == 0 {
            0.0
        } else {
            self.fp as f64 / benign as f64
        }
    }
}

/// Tallies predicted-vs-true labels (prediction `true` = malicious).
pub fn tally(predictions: &[bool], labels: &[Label]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (pred, label) in predictions.iter().zip(labels) {
        match (pred, label.is_malicious()) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    cm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub false_alarm_rate: f64,
}

impl EvalReport {
    pub fn from_confusion(model_id: String, confusion: ConfusionMatrix) -> Self {
        Self {
            model_id,
            accuracy: confusion.accuracy(),
            false_alarm_rate: confusion.false_alarm_rate(),
            confusion,
        }
    }
}

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

/// Scores the test set and predicts malicious iff `score >= threshold`.
pub fn evaluate(
    model: &TrainedModel,
    test: &Dataset,
    threshold: f64,
) -> Result<EvalReport, ClassifierError> {
    if test.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let mut predictions = Vec::with_capacity(test.len());
    for vector in test.vectors() {
        predictions.push(predict_score(model, vector)? >= threshold);
    }
    Ok(EvalReport::from_confusion(
        model.model_id.clone(),
        tally(&predictions, test.labels()),
    ))
}

/// Picks the winner: maximum accuracy, then minimum false alarm rate, then
/// lexicographically smallest model id.
pub fn select_best(reports: &[EvalReport]) -> Result<&str, ClassifierError> {
    reports
        .iter()
        .max_by(|a, b| {
            a.accuracy
                .total_cmp(&b.accuracy)
                .then_with(|| b.false_alarm_rate.total_cmp(&a.false_alarm_rate))
                .then_with(|| b.model_id.cmp(&a.model_id))
        })
        .map(|r| r.model_id.as_str())
        .ok_or(ClassifierError::EmptyInput)
}

#[cfg(test)]
pub(crate) fn dataset_from_rows(rows: &[(&[u8], Label)]) -> (Dataset, Vocabulary) {
    let dim = rows.first().map_or(0, |(bits, _)| bits.len());
    let vocab = Vocabulary::from_tokens((0..dim).map(|i| format!("perm:F{i:02}")));
    let vectors = rows
        .iter()
        .map(|(bits, _)| FeatureVector {
            bits: bits.to_vec(),
            vocab_hash: vocab.content_hash().to_string(),
        })
        .collect();
    let labels = rows.iter().map(|(_, l)| *l).collect();
    (Dataset::new(vectors, labels).unwrap(), vocab)
}
