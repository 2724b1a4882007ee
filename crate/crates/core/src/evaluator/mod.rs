//! Cloud-side application evaluator.
//!
//! Maps classifier scores onto a three-level risk verdict, persists trained
//! models as checksummed JSON bundles, and serves assessments over a
//! newline-delimited JSON protocol (see [`server`]). The evaluator can also
//! run in-process ("offline mode") so a device keeps working without a
//! network hop.

pub mod server;

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifiers::{predict_score, EvalReport, ModelParams, TrainedModel};
use crate::corpus::AppManifest;
use crate::features::{extract_features, Vocabulary};
use crate::telemetry::Tick;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Score bands: `>= 0.7` high, `[0.3, 0.7)` medium, `< 0.3` low.
pub const HIGH_RISK_THRESHOLD: f64 = 0.7;
pub const MEDIUM_RISK_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error("model error: {0}")]
    Model(String),
    #[error("unsupported bundle format version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt model bundle: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered risk verdict; `Low < Medium < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub fn from_score(score: f64) -> Self {
        if score >= HIGH_RISK_THRESHOLD {
            RiskLevel::High
        } else if score >= MEDIUM_RISK_THRESHOLD {
            RiskLevel::Medium
        } else {
            RiskLevel::Low
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::High => "high",
            RiskLevel::Medium => "medium",
            RiskLevel::Low => "low",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub app_id: String,
    pub risk: RiskLevel,
    pub score: f64,
    pub model_id: String,
    pub assessed_at: Tick,
}

/// Provenance recorded next to the model inside a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub corpus_hash: String,
    pub eval: EvalReport,
}

/// A trained model plus its vocabulary and training provenance; the unit
/// stored in the central model store and shipped to devices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: TrainedModel,
    pub metadata: TrainingMetadata,
}

impl ModelBundle {
    pub fn new(model: TrainedModel, metadata: TrainingMetadata) -> Self {
        Self { model, metadata }
    }

    /// Checks that the stored parameters fit the stored vocabulary.
    pub fn validate(&self) -> Result<(), EvaluatorError> {
        if !self.model.vocab.hash_is_consistent() {
            return Err(EvaluatorError::Corrupt(
                "vocabulary hash does not match its token list".into(),
            ));
        }
        if let Some(dim) = self.model.params.dim() {
            if dim != self.model.vocab.len() {
                return Err(EvaluatorError::Corrupt(format!(
                    "parameter dimension {dim} does not match vocabulary size {}",
                    self.model.vocab.len()
                )));
            }
        }
        Ok(())
    }
}

/// Scores one manifest against the bundle and maps the score to a risk
/// level. `at` is the device tick recorded as `assessed_at`.
pub fn assess(
    manifest: &AppManifest,
    bundle: &ModelBundle,
    at: Tick,
) -> Result<RiskAssessment, EvaluatorError> {
    let vector = extract_features(manifest, &bundle.model.vocab);
    let score =
        predict_score(&bundle.model, &vector).map_err(|e| EvaluatorError::Model(e.to_string()))?;
    Ok(RiskAssessment {
        app_id: manifest.app_id.clone(),
        risk: RiskLevel::from_score(score),
        score,
        model_id: bundle.model.model_id.clone(),
        assessed_at: at,
    })
}

#[derive(Serialize, Deserialize)]
struct BundleDocument {
    format_version: u32,
    checksum: String,
    #[serde(flatten)]
    payload: BundlePayload,
}

#[derive(Serialize, Deserialize)]
struct BundlePayload {
    vocabulary: Vocabulary,
    #[serde(flatten)]
    params: ModelParams,
    metadata: PayloadMetadata,
}

#[derive(Serialize, Deserialize)]
struct PayloadMetadata {
    model_id: String,
    seed: u64,
    corpus_hash: String,
    eval: EvalReport,
}

/// Checksum over the canonical JSON form (alphabetically ordered keys), so
/// the digest is independent of field order in the file.
fn canonical_checksum(value: &serde_json::Value) -> Result<String, EvaluatorError> {
    let bytes = serde_json::to_vec(value).map_err(|e| EvaluatorError::Model(e.to_string()))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

fn payload_checksum(payload: &BundlePayload) -> Result<String, EvaluatorError> {
    let value = serde_json::to_value(payload).map_err(|e| EvaluatorError::Model(e.to_string()))?;
    canonical_checksum(&value)
}

pub fn write_model<W: Write>(bundle: &ModelBundle, mut out: W) -> Result<(), EvaluatorError> {
    let payload = BundlePayload {
        vocabulary: bundle.model.vocab.clone(),
        params: bundle.model.params.clone(),
        metadata: PayloadMetadata {
            model_id: bundle.model.model_id.clone(),
            seed: bundle.metadata.seed,
            corpus_hash: bundle.metadata.corpus_hash.clone(),
            eval: bundle.metadata.eval.clone(),
        },
    };
    let doc = BundleDocument {
        format_version: BUNDLE_FORMAT_VERSION,
        checksum: payload_checksum(&payload)?,
        payload,
    };
    serde_json::to_writer(&mut out, &doc).map_err(|e| EvaluatorError::Model(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read>(mut reader: R) -> Result<ModelBundle, EvaluatorError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    // check the version before anything else so an old-format file reports
    // as a version problem, not corruption
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| EvaluatorError::Corrupt(e.to_string()))?;
    match probe
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(v) if v == u64::from(BUNDLE_FORMAT_VERSION) => {}
        Some(v) => {
            return Err(EvaluatorError::Version {
                found: v as u32,
                expected: BUNDLE_FORMAT_VERSION,
            })
        }
        None => return Err(EvaluatorError::Corrupt("missing format_version".into())),
    }
    // verify the checksum against the document as read, minus the envelope
    // fields themselves
    let mut payload_value = probe.clone();
    let stored_checksum = match payload_value.as_object_mut() {
        Some(map) => {
            map.remove("format_version");
            match map.remove("checksum") {
                Some(serde_json::Value::String(s)) => s,
                _ => return Err(EvaluatorError::Corrupt("missing checksum".into())),
            }
        }
        None => {
            return Err(EvaluatorError::Corrupt(
                "bundle is not a JSON object".into(),
            ))
        }
    };
    let recomputed = canonical_checksum(&payload_value)?;
    if recomputed != stored_checksum {
        return Err(EvaluatorError::Corrupt(format!(
            "checksum mismatch (stored {stored_checksum}, computed {recomputed})"
        )));
    }
    let doc: BundleDocument =
        serde_json::from_str(&text).map_err(|e| EvaluatorError::Corrupt(e.to_string()))?;
    let bundle = ModelBundle {
        model: TrainedModel {
            model_id: doc.payload.metadata.model_id.clone(),
            params: doc.payload.params,
            vocab: doc.payload.vocabulary,
        },
        metadata: TrainingMetadata {
            seed: doc.payload.metadata.seed,
            corpus_hash: doc.payload.metadata.corpus_hash,
            eval: doc.payload.metadata.eval,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<(), EvaluatorError> {
    write_model(bundle, File::create(path)?)
}

pub fn load_model(path: &Path) -> Result<ModelBundle, EvaluatorError> {
    read_model(File::open(path)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::classifiers::{train, Dataset, Hyperparams, ModelKind};
    use crate::corpus::{generate_corpus, GenerationProfile};
    use crate::features::{build_vocabulary, FeatureVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn test_bundle(kind: ModelKind) -> ModelBundle {
        let corpus = generate_corpus(99, 20, 20, &GenerationProfile::default()).unwrap();
        let vocab = build_vocabulary(&corpus);
        let data = Dataset::from_corpus(&corpus, &vocab);
        let model = train(&data, kind, &Hyperparams::default(), 5, &vocab).unwrap();
        let eval = crate::classifiers::evaluate(&model, &data, 0.5).unwrap();
        ModelBundle::new(
            model,
            TrainingMetadata {
                seed: 5,
                corpus_hash: crate::corpus::corpus_hash(&corpus),
                eval,
            },
        )
    }

    #[test]
    fn risk_map_thresholds() {
        assert_eq!(RiskLevel::from_score(0.9), RiskLevel::High);
        assert_eq!(RiskLevel::from_score(0.7), RiskLevel::High);
        assert_eq!(RiskLevel::from_score(0.3), RiskLevel::Medium);
        assert_eq!(RiskLevel::from_score(0.299_999), RiskLevel::Low);
        assert_eq!(RiskLevel::from_score(0.0), RiskLevel::Low);
    }

    #[test]
    fn assess_echoes_app_id_and_is_deterministic() {
        let bundle = test_bundle(ModelKind::NaiveBayes);
        let corpus = generate_corpus(99, 2, 2, &GenerationProfile::default()).unwrap();
        let (manifest, _) = &corpus.entries()[0];
        let a = assess(manifest, &bundle, 3).unwrap();
        let b = assess(manifest, &bundle, 7).unwrap();
        assert_eq!(a.app_id, manifest.app_id);
        assert_eq!(a.score, b.score);
        assert_eq!(a.risk, b.risk);
        assert_eq!(a.assessed_at, 3);
        assert_eq!(b.assessed_at, 7);
    }

    #[test]
    fn round_trip_preserves_predictions() {
        for kind in ModelKind::ALL {
            let bundle = test_bundle(kind);
            let mut buf = Vec::new();
            write_model(&bundle, &mut buf).unwrap();
            let loaded = read_model(buf.as_slice()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let dim = bundle.model.vocab.len();
            for _ in 0..100 {
                let bits: Vec<u8> = (0..dim).map(|_| rng.gen_range(0..=1u8)).collect();
                let x = FeatureVector {
                    bits,
                    vocab_hash: bundle.model.vocab.content_hash().to_string(),
                };
                let before = predict_score(&bundle.model, &x).unwrap();
                let after = predict_score(&loaded.model, &x).unwrap();
                assert_eq!(
                    before.to_bits(),
                    after.to_bits(),
                    "{kind} prediction drifted"
                );
            }
        }
    }

    #[test]
    fn wrong_format_version_is_a_version_error() {
        let bundle = test_bundle(ModelKind::NaiveBayes);
        let mut buf = Vec::new();
        write_model(&bundle, &mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(
            read_model(text.as_bytes()),
            Err(EvaluatorError::Version { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bundle = test_bundle(ModelKind::NaiveBayes);
        let mut buf = Vec::new();
        write_model(&bundle, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(matches!(
            read_model(buf.as_slice()),
            Err(EvaluatorError::Corrupt(_))
        ));
    }

    #[test]
    fn tampered_payload_fails_checksum() {
        let bundle = test_bundle(ModelKind::SvmSdca);
        let mut buf = Vec::new();
        write_model(&bundle, &mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace("\"seed\":5", "\"seed\":6");
        assert!(matches!(
            read_model(text.as_bytes()),
            Err(EvaluatorError::Corrupt(_))
        ));
    }

    proptest! {
        // risk never decreases as the score increases
        #[test]
        fn risk_map_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(RiskLevel::from_score(lo) <= RiskLevel::from_score(hi));
        }
    }
}
