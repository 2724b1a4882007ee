//! Streaming per-app behavioral baselines.
//!
//! A baseline is an exponentially weighted mean/variance over window-level
//! statistics. Anomaly rules compare a fresh window against the baseline as
//! a z-score with a configurable sigma floor, and baselines are frozen for
//! any window that raised a verdict so an attacker cannot teach the
//! detector their own behavior.

use serde::{Deserialize, Serialize};

use crate::telemetry::Tick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// EWMA smoothing applied to both mean and variance.
    pub alpha: f64,
    /// Window length in ticks.
    pub window_len: Tick,
    /// Floor on the standard deviation used by z-scores.
    pub sigma_min: f64,
    /// Windows a baseline must absorb before scoring starts.
    pub warmup_windows: u32,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            window_len: 10,
            sigma_min: 1.0,
            warmup_windows: 3,
        }
    }
}

/// EWMA mean/variance over one metric's window means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBaseline {
    pub ewma_mean: f64,
    pub ewma_var: f64,
    pub sample_count: u32,
}

impl MetricBaseline {
    /// Folds one window into the baseline. The first window initialises the
    /// statistics directly; later windows apply the EWMA update.
    pub fn absorb(&mut self, window_mean: f64, window_var: f64, alpha: f64) {
        if self.sample_count == 0 {
            self.ewma_mean = window_mean;
            self.ewma_var = window_var;
        } else {
            let diff = window_mean - self.ewma_mean;
            self.ewma_mean += alpha * diff;
            self.ewma_var = (1.0 - alpha) * (self.ewma_var + alpha * diff * diff);
        }
        self.sample_count += 1;
    }

    /// Signed z-score of `value` against the baseline with the sigma floor.
    pub fn z_score(&self, value: f64, sigma_min: f64) -> f64 {
        (value - self.ewma_mean) / self.ewma_var.max(0.0).sqrt().max(sigma_min)
    }
}
