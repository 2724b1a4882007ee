//! Host-based detection engine.
//!
//! Telemetry from watchlisted apps is grouped into fixed windows of
//! `window_len` ticks. Each completed window is scored two ways:
//!
//! * resource rule; z-score of the window's CPU/memory means against the
//!   app's EWMA baseline, thresholded by device state (3.0 active,
//!   1.5 idle);
//! * API rule; weighted sum of suspicious API calls in the window
//!   (root access 1.0, package install 0.8, shell exec 0.8, SMS 0.6,
//!   contacts 0.4, anything else 0.2) against a fixed alarm level of 1.0.
//!
//! The first `warmup_windows` windows only build the baseline. Windows that
//! raise a verdict never update it.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baseline::{BaselineConfig, MetricBaseline};
use crate::telemetry::{DeviceState, StreamOrderError, Tick};
use crate::watchlist::Watchlist;

/// Monitored API call categories. Unknown calls carry their token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiKind {
    RootAccess,
    InstallPackage,
    SendSms,
    ReadContacts,
    ExecShell,
    Other(String),
}

impl ApiKind {
    pub fn as_str(&self) -> &str {
        match self {
            ApiKind::RootAccess => "root_access",
            ApiKind::InstallPackage => "install_package",
            ApiKind::SendSms => "send_sms",
            ApiKind::ReadContacts => "read_contacts",
            ApiKind::ExecShell => "exec_shell",
            ApiKind::Other(token) => token,
        }
    }
}

impl From<&str> for ApiKind {
    fn from(s: &str) -> Self {
        match s {
            "root_access" => ApiKind::RootAccess,
            "install_package" => ApiKind::InstallPackage,
            "send_sms" => ApiKind::SendSms,
            "read_contacts" => ApiKind::ReadContacts,
            "exec_shell" => ApiKind::ExecShell,
            other => ApiKind::Other(other.to_string()),
        }
    }
}

impl Serialize for ApiKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ApiKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.is_empty() {
            return Err(D::Error::custom("api token must be non-empty"));
        }
        Ok(ApiKind::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCallEvent {
    pub tick: Tick,
    pub app_id: String,
    pub api: ApiKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    pub tick: Tick,
    pub app_id: String,
    pub cpu_pct: f64,
    pub mem_mb: f64,
}

impl ResourceSample {
    /// Clamps CPU into [0, 100] and memory into [0, inf).
    pub fn clamped(tick: Tick, app_id: String, cpu_pct: f64, mem_mb: f64) -> Self {
        Self {
            tick,
            app_id,
            cpu_pct: cpu_pct.clamp(0.0, 100.0),
            mem_mb: mem_mb.max(0.0),
        }
    }
}

/// Per-API vote weights for the suspicious-call rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiWeights {
    pub root_access: f64,
    pub install_package: f64,
    pub exec_shell: f64,
    pub send_sms: f64,
    pub read_contacts: f64,
    pub other: f64,
}

impl Default for ApiWeights {
    fn default() -> Self {
        Self {
            root_access: 1.0,
            install_package: 0.8,
            exec_shell: 0.8,
            send_sms: 0.6,
            read_contacts: 0.4,
            other: 0.2,
        }
    }
}

impl ApiWeights {
    pub fn weight(&self, api: &ApiKind) -> f64 {
        match api {
            ApiKind::RootAccess => self.root_access,
            ApiKind::InstallPackage => self.install_package,
            ApiKind::ExecShell => self.exec_shell,
            ApiKind::SendSms => self.send_sms,
            ApiKind::ReadContacts => self.read_contacts,
            ApiKind::Other(_) => self.other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HidsConfig {
    pub baseline: BaselineConfig,
    pub z_threshold_active: f64,
    pub z_threshold_idle: f64,
    pub api_alarm_threshold: f64,
    pub api_weights: ApiWeights,
}

impl Default for HidsConfig {
    fn default() -> Self {
        Self {
            baseline: BaselineConfig::default(),
            z_threshold_active: 3.0,
            z_threshold_idle: 1.5,
            api_alarm_threshold: 1.0,
            api_weights: ApiWeights::default(),
        }
    }
}

impl HidsConfig {
    pub fn z_threshold(&self, state: DeviceState) -> f64 {
        match state {
            DeviceState::Active => self.z_threshold_active,
            DeviceState::Idle => self.z_threshold_idle,
        }
    }
}

/// One completed per-app window covering ticks `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AppWindow {
    pub app_id: String,
    pub start: Tick,
    pub end: Tick,
    pub samples: Vec<ResourceSample>,
    pub events: Vec<ApiCallEvent>,
}

impl AppWindow {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty() && self.events.is_empty()
    }

    fn metric_stats(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some((mean, var))
    }

    /// (mean, population variance) of CPU over the window's samples.
    pub fn cpu_stats(&self) -> Option<(f64, f64)> {
        Self::metric_stats(self.samples.iter().map(|s| s.cpu_pct))
    }

    pub fn mem_stats(&self) -> Option<(f64, f64)> {
        Self::metric_stats(self.samples.iter().map(|s| s.mem_mb))
    }

    pub fn api_score(&self, weights: &ApiWeights) -> f64 {
        self.events.iter().map(|e| weights.weight(&e.api)).sum()
    }
}

/// Per-app CPU/memory baselines plus the absorbed-window counter that
/// drives warmup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HidsBaseline {
    pub cpu: MetricBaseline,
    pub mem: MetricBaseline,
    pub windows_absorbed: u32,
}

impl HidsBaseline {
    pub fn past_warmup(&self, warmup_windows: u32) -> bool {
        self.windows_absorbed >= warmup_windows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HidsVerdictKind {
    ResourceAnomaly,
    SuspiciousApi,
}

/// Samples and events of the window that fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HidsEvidence {
    pub samples: Vec<ResourceSample>,
    pub events: Vec<ApiCallEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HidsVerdict {
    /// Tick at which the window closed (exclusive end of the window).
    pub tick: Tick,
    pub app_id: String,
    pub kind: HidsVerdictKind,
    pub score: f64,
    pub threshold: f64,
    pub evidence: HidsEvidence,
}

/// Scores one completed window. `None` during warmup or when neither rule
/// fires; the resource rule wins when both would.
pub fn score_window(
    window: &AppWindow,
    baseline: &HidsBaseline,
    state: DeviceState,
    config: &HidsConfig,
) -> Option<HidsVerdict> {
    if !baseline.past_warmup(config.baseline.warmup_windows) {
        return None;
    }

    let mut resource_score = None;
    if baseline.cpu.sample_count > 0 {
        let z_cpu = window
            .cpu_stats()
            .map(|(mean, _)| baseline.cpu.z_score(mean, config.baseline.sigma_min));
        let z_mem = window
            .mem_stats()
            .map(|(mean, _)| baseline.mem.z_score(mean, config.baseline.sigma_min));
        resource_score = match (z_cpu, z_mem) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (one, two) => one.or(two),
        };
    }

    let z_threshold = config.z_threshold(state);
    if let Some(score) = resource_score {
        if score >= z_threshold {
            return Some(HidsVerdict {
                tick: window.end,
                app_id: window.app_id.clone(),
                kind: HidsVerdictKind::ResourceAnomaly,
                score,
                threshold: z_threshold,
                evidence: HidsEvidence {
                    samples: window.samples.clone(),
                    events: window.events.clone(),
                },
            });
        }
    }

    let api_score = window.api_score(&config.api_weights);
    if api_score >= config.api_alarm_threshold {
        return Some(HidsVerdict {
            tick: window.end,
            app_id: window.app_id.clone(),
            kind: HidsVerdictKind::SuspiciousApi,
            score: api_score,
            threshold: config.api_alarm_threshold,
            evidence: HidsEvidence {
                samples: window.samples.clone(),
                events: window.events.clone(),
            },
        });
    }
    None
}

/// Folds a verdict-free window into the baseline. Callers skip this for
/// windows that produced a verdict (the freeze rule).
pub fn update_baseline(baseline: &mut HidsBaseline, window: &AppWindow, config: &HidsConfig) {
    if let Some((mean, var)) = window.cpu_stats() {
        baseline.cpu.absorb(mean, var, config.baseline.alpha);
    }
    if let Some((mean, var)) = window.mem_stats() {
        baseline.mem.absorb(mean, var, config.baseline.alpha);
    }
    baseline.windows_absorbed += 1;
}

#[derive(Debug, Default)]
struct AppHidsState {
    samples: Vec<ResourceSample>,
    events: Vec<ApiCallEvent>,
    baseline: HidsBaseline,
}

/// Streaming host detector for one device.
///
/// `ingest_*` buffers telemetry for watchlisted apps (everything else is
/// dropped on the floor); `close_windows` completes every window ending at
/// or before the given tick and returns the verdicts.
#[derive(Debug)]
pub struct HidsDetector {
    config: HidsConfig,
    apps: BTreeMap<String, AppHidsState>,
    /// Ticks below this belong to already-closed windows.
    closed_below: Tick,
    last_tick: Tick,
}

impl HidsDetector {
    pub fn new(config: HidsConfig) -> Self {
        Self {
            config,
            apps: BTreeMap::new(),
            closed_below: 0,
            last_tick: 0,
        }
    }

    pub fn config(&self) -> &HidsConfig {
        &self.config
    }

    pub fn baseline(&self, app_id: &str) -> Option<&HidsBaseline> {
        self.apps.get(app_id).map(|s| &s.baseline)
    }

    fn check_order(&mut self, tick: Tick) -> Result<(), StreamOrderError> {
        if tick < self.last_tick || tick < self.closed_below {
            return Err(StreamOrderError {
                floor: self.last_tick.max(self.closed_below),
                got: tick,
            });
        }
        self.last_tick = tick;
        Ok(())
    }

    pub fn ingest_api(
        &mut self,
        event: ApiCallEvent,
        watchlist: &Watchlist,
    ) -> Result<(), StreamOrderError> {
        self.check_order(event.tick)?;
        if watchlist.is_monitored(&event.app_id) {
            self.apps
                .entry(event.app_id.clone())
                .or_default()
                .events
                .push(event);
        }
        Ok(())
    }

    pub fn ingest_resource(
        &mut self,
        sample: ResourceSample,
        watchlist: &Watchlist,
    ) -> Result<(), StreamOrderError> {
        self.check_order(sample.tick)?;
        if watchlist.is_monitored(&sample.app_id) {
            self.apps
                .entry(sample.app_id.clone())
                .or_default()
                .samples
                .push(sample);
        }
        Ok(())
    }

    /// Completes every window ending at or before `up_to` and scores it with
    /// the given device state. Verdict windows leave the baseline frozen.
    pub fn close_windows(&mut self, up_to: Tick, state: DeviceState) -> Vec<HidsVerdict> {
        let len = self.config.baseline.window_len;
        let boundary = up_to - up_to % len;
        if boundary <= self.closed_below {
            return Vec::new();
        }
        let mut verdicts = Vec::new();
        for (app_id, app) in &mut self.apps {
            let mut start = self.closed_below;
            while start + len <= boundary {
                let end = start + len;
                let in_window = |t: Tick| t >= start && t < end;
                let samples: Vec<_> = app
                    .samples
                    .iter()
                    .filter(|s| in_window(s.tick))
                    .cloned()
                    .collect();
                let events: Vec<_> = app
                    .events
                    .iter()
                    .filter(|e| in_window(e.tick))
                    .cloned()
                    .collect();
                let window = AppWindow {
                    app_id: app_id.clone(),
                    start,
                    end,
                    samples,
                    events,
                };
                if !window.is_empty() {
                    match score_window(&window, &app.baseline, state, &self.config) {
                        Some(verdict) => verdicts.push(verdict),
                        None => update_baseline(&mut app.baseline, &window, &self.config),
                    }
                }
                start = end;
            }
            app.samples.retain(|s| s.tick >= boundary);
            app.events.retain(|e| e.tick >= boundary);
        }
        self.closed_below = boundary;
        verdicts
    }
}
