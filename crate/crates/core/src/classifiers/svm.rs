//! Linear SVM trained by stochastic dual coordinate ascent (SDCA).
//!
//! Primal: `(lambda/2)||w||^2 + (1/n) sum max(0, 1 - y_i w.x_i)` with the
//! bias folded in as a constant augmented coordinate. Each dual coordinate
//! step maximizes the (concave) dual exactly under the box constraint
//! `alpha_i in [0, 1]`, so the dual objective never decreases.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            epochs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl SvmParams {
    pub fn margin(&self, bits: &[u8]) -> f64 {
        let mut m = self.bias;
        for (w, &bit) in self.weights.iter().zip(bits) {
            if bit != 0 {
                m += w;
            }
        }
        m
    }

    pub fn score(&self, bits: &[u8]) -> f64 {
        super::logistic(self.margin(bits))
    }
}

/// Trained weights plus the dual objective recorded after every epoch.
pub struct SdcaOutcome {
    pub params: SvmParams,
    pub dual_objective: Vec<f64>,
}

pub fn train_svm_sdca(data: &Dataset, config: &SvmConfig, seed: u64) -> SdcaOutcome {
    let n = data.len();
    let dim = data.dim();
    let lambda = config.lambda;
    // augmented representation: coordinate `dim` is the constant bias input
    let mut w = vec![0.0; dim + 1];
    let mut alpha = vec![0.0; n];
    let labels: Vec<f64> = data
        .labels()
        .iter()
        .map(|l| if l.is_malicious() { 1.0 } else { -1.0 })
        .collect();
    let sq_norms: Vec<f64> = data
        .vectors()
        .iter()
        .map(|v| v.bits.iter().filter(|&&b| b != 0).count() as f64 + 1.0)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut dual_objective = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let bits = &data.vectors()[i].bits;
            let y = labels[i];
            let mut dot = w[dim];
            for (j, &bit) in bits.iter().enumerate() {
                if bit != 0 {
                    dot += w[j];
                }
            }
            // exact maximizer of the dual restricted to alpha_i, clipped to
            // the box [0, 1]
            let unclipped = lambda * n as f64 * (1.0 - y * dot) / sq_norms[i];
            let delta = unclipped.clamp(-alpha[i], 1.0 - alpha[i]);
            if delta != 0.0 {
                alpha[i] += delta;
                let step = delta * y / (lambda * n as f64);
                for (j, &bit) in bits.iter().enumerate() {
                    if bit != 0 {
                        w[j] += step;
                    }
                }
                w[dim] += step;
            }
        }
        let w_norm_sq: f64 = w.iter().map(|x| x * x).sum();
        let dual = alpha.iter().sum::<f64>() / n as f64 - lambda / 2.0 * w_norm_sq;
        dual_objective.push(dual);
    }

    let bias = w[dim];
    w.truncate(dim);
    SdcaOutcome {
        params: SvmParams { weights: w, bias },
        dual_objective,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{dataset_from_rows, evaluate, Hyperparams, ModelKind};
    use super::*;
    use crate::corpus::Label::{Benign, Malicious};

    #[test]
    fn separable_one_dimensional_data_trains_to_perfect_accuracy() {
        let rows: [(&[u8], crate::corpus::Label); 6] = [
            (&[0], Benign),
            (&[0], Benign),
            (&[0], Benign),
            (&[1], Malicious),
            (&[1], Malicious),
            (&[1], Malicious),
        ];
        let (data, vocab) = dataset_from_rows(&rows);
        let model = super::super::train(
            &data,
            ModelKind::SvmSdca,
            &Hyperparams::default(),
            3,
            &vocab,
        )
        .unwrap();
        let report = evaluate(&model, &data, 0.5).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn dual_objective_is_monotone_non_decreasing() {
        let rows: [(&[u8], crate::corpus::Label); 8] = [
            (&[0, 0, 1], Benign),
            (&[0, 1, 0], Benign),
            (&[0, 0, 0], Benign),
            (&[0, 1, 1], Benign),
            (&[1, 0, 1], Malicious),
            (&[1, 1, 0], Malicious),
            (&[1, 1, 1], Malicious),
            (&[1, 0, 0], Malicious),
        ];
        let (data, _) = dataset_from_rows(&rows);
        let outcome = train_svm_sdca(&data, &SvmConfig::default(), 11);
        for pair in outcome.dual_objective.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-12,
                "dual decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn margin_counts_only_set_bits() {
        let params = SvmParams {
            weights: vec![2.0, -3.0, 0.5],
            bias: 0.25,
        };
        assert!((params.margin(&[1, 0, 1]) - 2.75).abs() < 1e-12);
        assert!((params.margin(&[0, 0, 0]) - 0.25).abs() < 1e-12);
        assert!(params.score(&[1, 0, 1]) > 0.5);
    }
}
