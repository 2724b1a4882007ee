//! Bernoulli Naive Bayes with Laplace add-one smoothing.

use serde::{Deserialize, Serialize};

use super::Dataset;

/// Class log-priors and per-feature Bernoulli log-probabilities.
/// Index 0 is benign, index 1 is malicious; smoothing keeps every
/// feature probability strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesParams {
    pub log_prior: [f64; 2],
    /// `log_feature_one[c][j]` = ln P(bit j = 1 | class c)
    pub log_feature_one: [Vec<f64>; 2],
    /// `log_feature_zero[c][j]` = ln P(bit j = 0 | class c)
    pub log_feature_zero: [Vec<f64>; 2],
}

impl NaiveBayesParams {
    /// Posterior P(malicious | x).
    pub fn score(&self, bits: &[u8]) -> f64 {
        let joint = |c: usize| {
            self.log_prior[c]
                + bits
                    .iter()
                    .enumerate()
                    .map(|(j, &bit)| {
                        if bit != 0 {
                            self.log_feature_one[c][j]
                        } else {
                            self.log_feature_zero[c][j]
                        }
                    })
                    .sum::<f64>()
        };
        super::logistic(joint(1) - joint(0))
    }
}

/// Closed-form training: class counts for the priors, smoothed per-feature
/// one-counts `(n_1c + 1) / (n_c + 2)` for the likelihoods.
pub fn train_naive_bayes(data: &Dataset) -> NaiveBayesParams {
    let dim = data.dim();
    let n = data.len();
    let mut class_count = [0usize; 2];
    let mut one_count = [vec![0usize; dim], vec![0usize; dim]];
    for (vector, label) in data.vectors().iter().zip(data.labels()) {
        let c = usize::from(label.is_malicious());
        class_count[c] += 1;
        for (j, &bit) in vector.bits.iter().enumerate() {
            if bit != 0 {
                one_count[c][j] += 1;
            }
        }
    }

    let log_prior = [
        (class_count[0] as f64 / n as f64).ln(),
        (class_count[1] as f64 / n as f64).ln(),
    ];
    let mut log_feature_one = [vec![0.0; dim], vec![0.0; dim]];
    let mut log_feature_zero = [vec![0.0; dim], vec![0.0; dim]];
    for c in 0..2 {
        for j in 0..dim {
            let p = (one_count[c][j] as f64 + 1.0) / (class_count[c] as f64 + 2.0);
            log_feature_one[c][j] = p.ln();
            log_feature_zero[c][j] = (1.0 - p).ln();
        }
    }
    NaiveBayesParams {
        log_prior,
        log_feature_one,
        log_feature_zero,
    }
}

#[cfg(test)]
mod tests {
    use super::super::dataset_from_rows;
    use super::*;
    use crate::corpus::Label::{Benign, Malicious};

    #[test]
    fn perfectly_aligned_feature_classifies_training_set() {
        // feature 0 equals the label on all four points
        let rows: [(&[u8], crate::corpus::Label); 4] = [
            (&[0, 1], Benign),
            (&[0, 0], Benign),
            (&[1, 1], Malicious),
            (&[1, 0], Malicious),
        ];
        let (data, _) = dataset_from_rows(&rows);
        let params = train_naive_bayes(&data);
        for (vector, label) in data.vectors().iter().zip(data.labels()) {
            let score = params.score(&vector.bits);
            assert_eq!(score >= 0.5, label.is_malicious(), "score {score}");
        }
    }

    #[test]
    fn symmetric_statistics_give_half() {
        // class statistics mirror each other; the all-symmetric input [1, 0]
        // carries no evidence either way
        let rows: [(&[u8], crate::corpus::Label); 4] = [
            (&[1, 0], Benign),
            (&[0, 1], Benign),
            (&[1, 0], Malicious),
            (&[0, 1], Malicious),
        ];
        let (data, _) = dataset_from_rows(&rows);
        let params = train_naive_bayes(&data);
        assert!((params.score(&[1, 0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_feature_closed_form() {
        // 2 benign with bit 0, 2 malicious with bit 1:
        // priors 1/2, P(1|mal) = 3/4, P(1|ben) = 1/4 after smoothing,
        // so score(bit = 1) = 0.75 by Bayes' rule.
        let rows: [(&[u8], crate::corpus::Label); 4] = [
            (&[0], Benign),
            (&[0], Benign),
            (&[1], Malicious),
            (&[1], Malicious),
        ];
        let (data, _) = dataset_from_rows(&rows);
        let params = train_naive_bayes(&data);
        assert!((params.score(&[1]) - 0.75).abs() < 1e-12);
        assert!((params.score(&[0]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn smoothed_probabilities_strictly_inside_unit_interval() {
        let rows: [(&[u8], crate::corpus::Label); 2] = [(&[0, 0], Benign), (&[1, 1], Malicious)];
        let (data, _) = dataset_from_rows(&rows);
        let params = train_naive_bayes(&data);
        for c in 0..2 {
            for j in 0..2 {
                let p = params.log_feature_one[c][j].exp();
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
