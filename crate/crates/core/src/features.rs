//! Manifest feature extraction and selection.
//!
//! Manifest tokens are namespaced (`perm:`, `intent:`, `hw:`), collected
//! into a lexicographically ordered [`Vocabulary`], and manifests are
//! encoded as binary indicator vectors against it. Feature selection ranks
//! tokens by mutual information between the feature bit and the label,
//! computed from an add-one-smoothed 2x2 contingency table.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AppManifest, Corpus, Label};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature selection requires both classes")]
    InsufficientClasses,
    #[error("vectors and labels must be aligned ({vectors} vectors vs {labels} labels)")]
    LengthMismatch { vectors: usize, labels: usize },
    #[error("feature vector was encoded against a different vocabulary")]
    VocabMismatch,
}

/// Ordered, content-addressed token list shared by trainer and device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    content_hash: String,
}

impl Vocabulary {
    /// Builds a vocabulary from arbitrary namespaced tokens; the set is
    /// deduplicated and sorted so equal token sets always hash identically.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let set: BTreeSet<String> = tokens.into_iter().collect();
        let tokens: Vec<String> = set.into_iter().collect();
        let content_hash = hash_tokens(&tokens);
        Self {
            tokens,
            content_hash,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    /// Recomputes the hash from the token list; false if the struct was
    /// tampered with (e.g. edited on disk).
    pub fn hash_is_consistent(&self) -> bool {
        hash_tokens(&self.tokens) == self.content_hash
    }
}

fn hash_tokens(tokens: &[String]) -> String {
    let mut hasher = Sha256::new();
    for token in tokens {
        hasher.update(token.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Binary indicator encoding of one manifest against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bits: Vec<u8>,
    pub vocab_hash: String,
}

impl FeatureVector {
    pub fn matches(&self, vocab: &Vocabulary) -> bool {
        self.vocab_hash == vocab.content_hash() && self.bits.len() == vocab.len()
    }
}

/// Tokens ranked by mutual information, descending; ties broken by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub entries: Vec<(String, f64)>,
}

/// Tokens of a manifest in namespaced form.
pub fn namespaced_tokens(manifest: &AppManifest) -> impl Iterator<Item = String> + '_ {
    let perms = manifest.permissions.iter().map(|t| format!("perm:{t}"));
    let intents = manifest.intents.iter().map(|t| format!("intent:{t}"));
    let hw = manifest.hardware_features.iter().map(|t| format!("hw:{t}"));
    perms.chain(intents).chain(hw)
}

/// Union of all namespaced tokens across the corpus, lexicographically
/// sorted. An empty corpus yields an empty vocabulary.
pub fn build_vocabulary(corpus: &Corpus) -> Vocabulary {
    let mut tokens = BTreeSet::new();
    for (manifest, _) in corpus.entries() {
        tokens.extend(namespaced_tokens(manifest));
    }
    Vocabulary::from_tokens(tokens)
}

/// Encodes a manifest against `vocab`: bit i is 1 iff vocabulary token i is
/// present. Manifest tokens outside the vocabulary are ignored.
pub fn extract_features(manifest: &AppManifest, vocab: &Vocabulary) -> FeatureVector {
    let present: BTreeSet<String> = namespaced_tokens(manifest).collect();
    let bits = vocab
        .tokens()
        .iter()
        .map(|token| u8::from(present.contains(token)))
        .collect();
    FeatureVector {
        bits,
        vocab_hash: vocab.content_hash().to_string(),
    }
}

/// Mutual information (nats) of the add-one-smoothed 2x2 table with cell
/// counts `n[feature][label]`.
fn smoothed_mi(n11: usize, n10: usize, n01: usize, n00: usize) -> f64 {
    let cells = [
        [n00 as f64 + 1.0, n01 as f64 + 1.0],
        [n10 as f64 + 1.0, n11 as f64 + 1.0],
    ];
    let total: f64 = cells.iter().flatten().sum();
    let pf = [
        (cells[0][0] + cells[0][1]) / total,
        (cells[1][0] + cells[1][1]) / total,
    ];
    let pl = [
        (cells[0][0] + cells[1][0]) / total,
        (cells[0][1] + cells[1][1]) / total,
    ];
    let mut mi = 0.0;
    for f in 0..2 {
        for l in 0..2 {
            let p = cells[f][l] / total;
            mi += p * (p / (pf[f] * pl[l])).ln();
        }
    }
    // exact independence can land a hair below zero in floating point
    mi.max(0.0)
}

/// Ranks every vocabulary token by smoothed mutual information with the
/// label; descending score, lexicographic tie-break.
pub fn rank_features(
    vectors: &[FeatureVector],
    labels: &[Label],
    vocab: &Vocabulary,
) -> Result<FeatureRanking, FeatureError> {
    if vectors.len() != labels.len() {
        return Err(FeatureError::LengthMismatch {
            vectors: vectors.len(),
            labels: labels.len(),
        });
    }
    if vectors.iter().any(|v| !v.matches(vocab)) {
        return Err(FeatureError::VocabMismatch);
    }
    let malicious = labels.iter().filter(|l| l.is_malicious()).count();
    if malicious == 0 || malicious == labels.len() {
        return Err(FeatureError::InsufficientClasses);
    }

    let mut entries: Vec<(String, f64)> = vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, token)| {
            let mut n = [[0usize; 2]; 2];
            for (vector, label) in vectors.iter().zip(labels) {
                let f = vector.bits[i] as usize;
                let l = usize::from(label.is_malicious());
                n[f][l] += 1;
            }
            (
                token.clone(),
                smoothed_mi(n[1][1], n[1][0], n[0][1], n[0][0]),
            )
        })
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(FeatureRanking { entries })
}

/// Keeps the `k` most informative tokens and returns them as a fresh
/// vocabulary (re-sorted lexicographically so encodings stay stable).
/// `k >= vocab.len()` returns the full vocabulary.
pub fn select_features(
    vectors: &[FeatureVector],
    labels: &[Label],
    k: usize,
    vocab: &Vocabulary,
) -> Result<Vocabulary, FeatureError> {
    if k >= vocab.len() {
        return Ok(vocab.clone());
    }
    let ranking = rank_features(vectors, labels, vocab)?;
    Ok(Vocabulary::from_tokens(
        ranking.entries.into_iter().take(k).map(|(token, _)| token),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AppLabel;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn manifest(id: &str, perms: &[&str], intents: &[&str]) -> AppManifest {
        AppManifest {
            app_id: id.to_string(),
            package_name: format!("com.test.{id}"),
            permissions: perms.iter().map(|s| s.to_string()).collect(),
            intents: intents.iter().map(|s| s.to_string()).collect(),
            hardware_features: BTreeSet::new(),
        }
    }

    fn labeled(manifest: AppManifest, label: Label) -> (AppManifest, AppLabel) {
        let app_id = manifest.app_id.clone();
        (
            manifest,
            AppLabel {
                app_id,
                label,
                family: None,
            },
        )
    }

    // Independent brute-force MI: explicit probability table, no shared code
    // with `smoothed_mi` beyond arithmetic.
    fn mi_oracle(n11: usize, n10: usize, n01: usize, n00: usize) -> f64 {
        let c11 = (n11 + 1) as f64;
        let c10 = (n10 + 1) as f64;
        let c01 = (n01 + 1) as f64;
        let c00 = (n00 + 1) as f64;
        let total = c11 + c10 + c01 + c00;
        let p = |c: f64| c / total;
        let terms = [
            (c11, (c11 + c10) / total, (c11 + c01) / total),
            (c10, (c11 + c10) / total, (c10 + c00) / total),
            (c01, (c01 + c00) / total, (c11 + c01) / total),
            (c00, (c01 + c00) / total, (c10 + c00) / total),
        ];
        terms
            .iter()
            .map(|(c, pf, pl)| p(*c) * (p(*c) / (pf * pl)).ln())
            .sum()
    }

    #[test]
    fn empty_corpus_gives_empty_vocabulary() {
        let corpus = Corpus::new(Vec::new()).unwrap();
        assert!(build_vocabulary(&corpus).is_empty());
    }

    #[test]
    fn vocabulary_is_sorted_union() {
        let corpus = Corpus::new(vec![
            labeled(manifest("a", &["A"], &[]), Label::Benign),
            labeled(manifest("b", &["A"], &["B"]), Label::Malicious),
        ])
        .unwrap();
        let vocab = build_vocabulary(&corpus);
        assert_eq!(
            vocab.tokens(),
            ["intent:B".to_string(), "perm:A".to_string()]
        );
    }

    #[test]
    fn duplicate_tokens_appear_once() {
        let corpus = Corpus::new(vec![
            labeled(manifest("a", &["A"], &[]), Label::Benign),
            labeled(manifest("b", &["A"], &[]), Label::Malicious),
        ])
        .unwrap();
        assert_eq!(build_vocabulary(&corpus).len(), 1);
    }

    #[test]
    fn empty_manifest_encodes_all_zeros() {
        let vocab = Vocabulary::from_tokens(["perm:A".to_string(), "perm:B".to_string()]);
        let v = extract_features(&manifest("x", &[], &[]), &vocab);
        assert_eq!(v.bits, vec![0, 0]);
    }

    #[test]
    fn full_manifest_encodes_all_ones() {
        let vocab = Vocabulary::from_tokens(["intent:I".to_string(), "perm:A".to_string()]);
        let v = extract_features(&manifest("x", &["A"], &["I"]), &vocab);
        assert_eq!(v.bits, vec![1, 1]);
    }

    #[test]
    fn out_of_vocabulary_tokens_ignored() {
        let vocab = Vocabulary::from_tokens(["perm:A".to_string()]);
        let v = extract_features(&manifest("x", &["UNKNOWN"], &[]), &vocab);
        assert_eq!(v.bits, vec![0]);
    }

    fn toy_dataset() -> (Vec<FeatureVector>, Vec<Label>, Vocabulary) {
        // perm:EXACT mirrors the label, perm:CONST is constant, perm:NOISE
        // is uninformative.
        let vocab = Vocabulary::from_tokens([
            "perm:CONST".to_string(),
            "perm:EXACT".to_string(),
            "perm:NOISE".to_string(),
        ]);
        let rows: Vec<(Vec<u8>, Label)> = vec![
            (vec![1, 0, 0], Label::Benign),
            (vec![1, 0, 1], Label::Benign),
            (vec![1, 0, 0], Label::Benign),
            (vec![1, 1, 1], Label::Malicious),
            (vec![1, 1, 0], Label::Malicious),
            (vec![1, 1, 1], Label::Malicious),
        ];
        let vectors = rows
            .iter()
            .map(|(bits, _)| FeatureVector {
                bits: bits.clone(),
                vocab_hash: vocab.content_hash().to_string(),
            })
            .collect();
        let labels = rows.iter().map(|(_, l)| *l).collect();
        (vectors, labels, vocab)
    }

    #[test]
    fn perfect_feature_ranks_first_and_matches_oracle() {
        let (vectors, labels, vocab) = toy_dataset();
        let ranking = rank_features(&vectors, &labels, &vocab).unwrap();
        assert_eq!(ranking.entries[0].0, "perm:EXACT");
        // the perfect 3/0/0/3 table
        assert!((ranking.entries[0].1 - mi_oracle(3, 0, 0, 3)).abs() < 1e-12);
        assert!(ranking.entries[0].1 > ranking.entries[1].1);
    }

    #[test]
    fn constant_feature_scores_minimum() {
        let (vectors, labels, vocab) = toy_dataset();
        let ranking = rank_features(&vectors, &labels, &vocab).unwrap();
        assert_eq!(ranking.entries.last().unwrap().0, "perm:CONST");
        assert!((ranking.entries.last().unwrap().1 - mi_oracle(3, 3, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn select_all_returns_input_vocabulary() {
        let (vectors, labels, vocab) = toy_dataset();
        let selected = select_features(&vectors, &labels, vocab.len(), &vocab).unwrap();
        assert_eq!(selected, vocab);
    }

    #[test]
    fn selected_subset_is_lexicographically_sorted() {
        let (vectors, labels, vocab) = toy_dataset();
        let selected = select_features(&vectors, &labels, 2, &vocab).unwrap();
        assert_eq!(selected.len(), 2);
        let mut sorted = selected.tokens().to_vec();
        sorted.sort();
        assert_eq!(selected.tokens(), sorted.as_slice());
        assert!(selected.tokens().contains(&"perm:EXACT".to_string()));
    }

    #[test]
    fn single_class_input_errors() {
        let (vectors, _, vocab) = toy_dataset();
        let labels = vec![Label::Benign; vectors.len()];
        assert!(matches!(
            rank_features(&vectors, &labels, &vocab),
            Err(FeatureError::InsufficientClasses)
        ));
    }

    proptest! {
        // MI is symmetric in the class labels.
        #[test]
        fn mi_label_swap_symmetry(n11 in 0usize..40, n10 in 0usize..40, n01 in 0usize..40, n00 in 0usize..40) {
            let a = smoothed_mi(n11, n10, n01, n00);
            let b = smoothed_mi(n10, n11, n00, n01);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn encoding_length_equals_vocab_size(perms in proptest::collection::btree_set("[a-z]{1,6}", 0..10)) {
            let vocab = Vocabulary::from_tokens(
                ["perm:A", "perm:B", "perm:C", "hw:gps"].iter().map(|s| s.to_string()),
            );
            let m = AppManifest {
                app_id: "x".into(),
                package_name: "com.test.x".into(),
                permissions: perms,
                intents: BTreeSet::new(),
                hardware_features: BTreeSet::new(),
            };
            let v = extract_features(&m, &vocab);
            prop_assert_eq!(v.bits.len(), vocab.len());
        }
    }
}
