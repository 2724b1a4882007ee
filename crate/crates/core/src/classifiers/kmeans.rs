//! K-means over binary feature vectors: k-means++ seeding, Lloyd iterations
//! to an assignment fixpoint (or an iteration cap), and a per-cluster
//! malicious fraction used as the prediction score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub centroids: Vec<Vec<f64>>,
    /// Fraction of training points in each cluster that were malicious;
    /// empty clusters score 0.
    pub cluster_malicious_fraction: Vec<f64>,
}

impl KMeansParams {
    /// Index of the nearest centroid; ties resolve to the lower index.
    pub fn nearest(&self, point: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dist = squared_distance(&self.centroids[0], point);
        for (i, centroid) in self.centroids.iter().enumerate().skip(1) {
            let d = squared_distance(centroid, point);
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }

    pub fn score(&self, bits: &[u8]) -> f64 {
        let point: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        self.cluster_malicious_fraction[self.nearest(&point)]
    }
}

/// Per-iteration within-cluster SSE, recorded after each assignment phase.
pub struct KMeansTrace {
    pub sse_per_iteration: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeanspp_seed(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    while centroids.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| squared_distance(c, p))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total <= 0.0 {
            // all remaining mass sits on already-chosen points
            rng.gen_range(0..points.len())
        } else {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[next].clone());
    }
    centroids
}

pub fn train_kmeans(
    data: &Dataset,
    config: &KMeansConfig,
    seed: u64,
) -> Result<(KMeansParams, KMeansTrace), ClassifierError> {
    let n = data.len();
    if config.k == 0 || config.k > n {
        return Err(ClassifierError::Config(format!(
            "k = {} must lie in 1..={n}",
            config.k
        )));
    }
    let points: Vec<Vec<f64>> = data
        .vectors()
        .iter()
        .map(|v| v.bits.iter().map(|&b| f64::from(b)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp_seed(&points, config.k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut sse_per_iteration = Vec::new();

    for _ in 0..config.max_iterations {
        let mut changed = false;
        let mut sse = 0.0;
        for (i, point) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_dist = squared_distance(&centroids[0], point);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = squared_distance(centroid, point);
                if d < best_dist {
                    best = c;
                    best_dist = d;
                }
            }
            sse += best_dist;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        sse_per_iteration.push(sse);
        if !changed {
            break;
        }
        // recompute means; empty clusters keep their previous centroid
        let mut sums = vec![vec![0.0; data.dim()]; config.k];
        let mut counts = vec![0usize; config.k];
        for (point, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (acc, x) in sums[c].iter_mut().zip(point) {
                *acc += x;
            }
        }
        for c in 0..config.k {
            if counts[c] > 0 {
                for acc in &mut sums[c] {
                    *acc /= counts[c] as f64;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            }
        }
    }

    let mut malicious = vec![0usize; config.k];
    let mut totals = vec![0usize; config.k];
    for (label, &c) in data.labels().iter().zip(&assignment) {
        totals[c] += 1;
        if label.is_malicious() {
            malicious[c] += 1;
        }
    }
    let cluster_malicious_fraction = (0..config.k)
        .map(|c| {
            if totals[c] == 0 {
                0.0
            } else {
                malicious[c] as f64 / totals[c] as f64
            }
        })
        .collect();

    Ok((
        KMeansParams {
            centroids,
            cluster_malicious_fraction,
        },
        KMeansTrace { sse_per_iteration },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::dataset_from_rows;
    use super::*;
    use crate::corpus::Label::{Benign, Malicious};

    fn two_blob_rows() -> Vec<(Vec<u8>, crate::corpus::Label)> {
        let mut rows = Vec::new();
        for _ in 0..5 {
            rows.push((vec![0u8, 0, 0], Benign));
            rows.push((vec![1u8, 1, 1], Malicious));
        }
        rows
    }

    #[test]
    fn recovers_well_separated_cluster_means() {
        let rows = two_blob_rows();
        let borrowed: Vec<(&[u8], crate::corpus::Label)> =
            rows.iter().map(|(b, l)| (b.as_slice(), *l)).collect();
        let (data, _) = dataset_from_rows(&borrowed);
        let (params, _) = train_kmeans(&data, &KMeansConfig::default(), 9).unwrap();
        let mut centroids = params.centroids.clone();
        centroids.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(centroids[0], vec![0.0, 0.0, 0.0]);
        assert_eq!(centroids[1], vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn all_malicious_cluster_scores_one() {
        let rows = two_blob_rows();
        let borrowed: Vec<(&[u8], crate::corpus::Label)> =
            rows.iter().map(|(b, l)| (b.as_slice(), *l)).collect();
        let (data, _) = dataset_from_rows(&borrowed);
        let (params, _) = train_kmeans(&data, &KMeansConfig::default(), 9).unwrap();
        assert_eq!(params.score(&[1, 1, 1]), 1.0);
        assert_eq!(params.score(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn sse_never_increases_across_iterations() {
        let rows: Vec<(Vec<u8>, crate::corpus::Label)> = (0..16)
            .map(|i| {
                (
                    vec![
                        (i & 1) as u8,
                        ((i >> 1) & 1) as u8,
                        ((i >> 2) & 1) as u8,
                        ((i >> 3) & 1) as u8,
                    ],
                    if i % 3 == 0 { Malicious } else { Benign },
                )
            })
            .collect();
        let borrowed: Vec<(&[u8], crate::corpus::Label)> =
            rows.iter().map(|(b, l)| (b.as_slice(), *l)).collect();
        let (data, _) = dataset_from_rows(&borrowed);
        for seed in 0..20 {
            let (_, trace) = train_kmeans(&data, &KMeansConfig::default(), seed).unwrap();
            for pair in trace.sse_per_iteration.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9, "SSE rose: {pair:?}");
            }
        }
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let rows: [(&[u8], crate::corpus::Label); 2] = [(&[0], Benign), (&[1], Malicious)];
        let (data, _) = dataset_from_rows(&rows);
        let config = KMeansConfig {
            k: 3,
            ..KMeansConfig::default()
        };
        assert!(matches!(
            train_kmeans(&data, &config, 1),
            Err(ClassifierError::Config(_))
        ));
    }

    #[test]
    fn nearest_tie_goes_to_lower_index() {
        let params = KMeansParams {
            centroids: vec![vec![0.0], vec![1.0]],
            cluster_malicious_fraction: vec![0.25, 0.75],
        };
        // 0.5 is equidistant from both centroids
        assert_eq!(params.nearest(&[0.5]), 0);
    }
}
