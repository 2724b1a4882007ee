//! AdaBoost over single-bit decision stumps.
//!
//! Each round performs an exact greedy search across every (feature,
//! polarity) pair for the minimum weighted error. Votes are the usual
//! half-log-odds `0.5 ln((1 - eps)/eps)`; a zero-error stump would vote
//! infinitely, so votes are capped at `max_vote` and boosting stops there.

use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StumpsConfig {
    pub rounds: usize,
    pub max_vote: f64,
}

impl Default for StumpsConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            max_vote: 10.0,
        }
    }
}

/// One weak learner: polarity +1 predicts malicious when the bit is set,
/// polarity -1 predicts malicious when it is clear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub polarity: i8,
    pub vote: f64,
}

impl Stump {
    fn predict(&self, bits: &[u8]) -> f64 {
        let signed_bit = if bits[self.feature] != 0 { 1.0 } else { -1.0 };
        f64::from(self.polarity) * signed_bit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpsParams {
    pub stumps: Vec<Stump>,
}

impl StumpsParams {
    pub fn vote_sum(&self, bits: &[u8]) -> f64 {
        self.stumps.iter().map(|s| s.vote * s.predict(bits)).sum()
    }

    pub fn score(&self, bits: &[u8]) -> f64 {
        super::logistic(self.vote_sum(bits))
    }
}

pub fn train_stumps(data: &Dataset, config: &StumpsConfig) -> StumpsParams {
    let n = data.len();
    let dim = data.dim();
    let labels: Vec<f64> = data
        .labels()
        .iter()
        .map(|l| if l.is_malicious() { 1.0 } else { -1.0 })
        .collect();
    let mut weights = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();

    for _ in 0..config.rounds {
        // weighted error of the polarity-+1 stump on each feature; the
        // polarity -1 stump errs exactly on the complement
        let mut best: Option<(f64, usize, i8)> = None;
        for feature in 0..dim {
            let mut err_pos = 0.0;
            for i in 0..n {
                let h = if data.vectors()[i].bits[feature] != 0 {
                    1.0
                } else {
                    -1.0
                };
                if h != labels[i] {
                    err_pos += weights[i];
                }
            }
            let err_neg = 1.0 - err_pos;
            let (err, polarity) = if err_pos <= err_neg {
                (err_pos, 1i8)
            } else {
                (err_neg, -1i8)
            };
            if best.is_none_or(|(b, _, _)| err < b) {
                best = Some((err, feature, polarity));
            }
        }
        let (err, feature, polarity) = best.expect("dim > 0 for non-empty dataset");
        if err >= 0.5 - 1e-12 {
            break; // nothing better than chance left
        }
        if err <= 1e-12 {
            stumps.push(Stump {
                feature,
                polarity,
                vote: config.max_vote,
            });
            break;
        }
        let vote = (0.5 * ((1.0 - err) / err).ln()).min(config.max_vote);
        let stump = Stump {
            feature,
            polarity,
            vote,
        };
        for i in 0..n {
            weights[i] *= (-vote * labels[i] * stump.predict(&data.vectors()[i].bits)).exp();
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        stumps.push(stump);
    }

    StumpsParams { stumps }
}

#[cfg(test)]
mod tests {
    use super::super::dataset_from_rows;
    use super::*;
    use crate::corpus::Label::{Benign, Malicious};

    #[test]
    fn perfect_feature_yields_single_capped_stump() {
        let rows: [(&[u8], crate::corpus::Label); 4] = [
            (&[0, 1], Benign),
            (&[0, 0], Benign),
            (&[1, 0], Malicious),
            (&[1, 1], Malicious),
        ];
        let (data, _) = dataset_from_rows(&rows);
        let params = train_stumps(&data, &StumpsConfig::default());
        assert_eq!(params.stumps.len(), 1);
        assert_eq!(params.stumps[0].feature, 0);
        assert_eq!(params.stumps[0].polarity, 1);
        assert_eq!(params.stumps[0].vote, 10.0);
        assert!(params.score(&[1, 0]) > 0.99);
        assert!(params.score(&[0, 0]) < 0.01);
    }

    #[test]
    fn inverted_feature_uses_negative_polarity() {
        let rows: [(&[u8], crate::corpus::Label); 4] = [
            (&[1], Benign),
            (&[1], Benign),
            (&[0], Malicious),
            (&[0], Malicious),
        ];
        let (data, _) = dataset_from_rows(&rows);
        let params = train_stumps(&data, &StumpsConfig::default());
        assert_eq!(params.stumps[0].polarity, -1);
        assert!(params.score(&[0]) > 0.5);
    }

    #[test]
    fn noisy_data_trains_multiple_rounds_and_classifies() {
        // feature 0 is right on 7 of 8 points; features 1-2 carry the rest
        let rows: [(&[u8], crate::corpus::Label); 8] = [
            (&[0, 0, 0], Benign),
            (&[0, 0, 1], Benign),
            (&[0, 1, 0], Benign),
            (&[1, 0, 0], Benign),
            (&[1, 1, 0], Malicious),
            (&[1, 0, 1], Malicious),
            (&[1, 1, 1], Malicious),
            (&[0, 1, 1], Malicious),
        ];
        let (data, _) = dataset_from_rows(&rows);
        let params = train_stumps(&data, &StumpsConfig::default());
        assert!(params.stumps.len() > 1);
        let correct = rows
            .iter()
            .filter(|(bits, label)| (params.score(bits) >= 0.5) == label.is_malicious())
            .count();
        assert!(correct >= 7, "only {correct}/8 correct");
    }

    #[test]
    fn votes_never_exceed_cap() {
        let rows: [(&[u8], crate::corpus::Label); 4] = [
            (&[0, 1], Benign),
            (&[0, 0], Benign),
            (&[1, 1], Malicious),
            (&[1, 0], Malicious),
        ];
        let (data, _) = dataset_from_rows(&rows);
        let params = train_stumps(
            &data,
            &StumpsConfig {
                rounds: 100,
                max_vote: 10.0,
            },
        );
        assert!(params.stumps.iter().all(|s| s.vote <= 10.0));
    }
}
