//! Deterministic discrete-tick device simulator.
//!
//! A scenario describes the device schedule, the installed apps (benign
//! behavior profiles plus optional attacks), and the assessment cadence.
//! Each tick the simulator:
//!
//! 1. assesses newly installed apps (tick 0) and on the reassessment
//!    interval, feeding the watchlist;
//! 2. generates behavior from per-app seeded RNG streams; terminated apps
//!    are silent, flows to blocked hosts are dropped before the network
//!    detector sees them;
//! 3. runs both detectors at window boundaries and pushes every verdict
//!    through the prevention engine, recording verdicts, overrides and
//!    actions in the audit log.
//!
//! Identical `(scenario, bundle, auto mode)` inputs produce byte-identical
//! reports; per-app RNG streams are derived from `(seed, app_id)` so adding
//! an app never perturbs the others.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::AppManifest;
use crate::evaluator::{assess, EvaluatorError, ModelBundle, RiskAssessment};
use crate::hids::{ApiCallEvent, ApiKind, HidsConfig, HidsDetector, ResourceSample};
use crate::nids::{FlowRecord, NidsConfig, NidsDetector};
use crate::prevention::{
    apply, AuditEvent, AuditLog, AuditRecord, DetectionVerdict, EffectSet, OverrideChoice,
    OverrideSet, PolicyMode, PreventionAction, PreventionEngine, PreventionError, Prompter,
};
use crate::telemetry::{DeviceState, StreamOrderError, TelemetryRecord, Tick};
use crate::watchlist::Watchlist;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Prevention(#[from] PreventionError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error(transparent)]
    Stream(#[from] StreamOrderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePhase {
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub state: DeviceState,
}

/// Benign per-app behavior: Gaussian resource samples each tick and
/// Poisson-count flows (fixed byte sizes) into a fixed host pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub cpu_mean: f64,
    pub cpu_std: f64,
    pub mem_mean: f64,
    pub mem_std: f64,
    pub flows_per_window: f64,
    pub up_bytes_mean: f64,
    pub down_bytes_mean: f64,
    pub host_pool: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attack {
    /// Upload bursts to one fresh host from `start_tick` on:
    /// `bytes_per_window` up per window at the given up/down ratio.
    Exfiltration {
        start_tick: Tick,
        bytes_per_window: u64,
        ratio: f64,
        #[serde(default)]
        host: Option<String>,
    },
    /// Small periodic flow to one fresh host every `period` ticks,
    /// continuing through idle periods.
    Beacon {
        start_tick: Tick,
        period: Tick,
        up_bytes: u64,
        down_bytes: u64,
        #[serde(default)]
        host: Option<String>,
    },
    /// Root-access and shell-exec API calls at `start_tick`.
    RootAbuse { start_tick: Tick },
}

impl Attack {
    pub fn start_tick(&self) -> Tick {
        match self {
            Attack::Exfiltration { start_tick, .. }
            | Attack::Beacon { start_tick, .. }
            | Attack::RootAbuse { start_tick } => *start_tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub manifest: AppManifest,
    pub behavior: BehaviorProfile,
    #[serde(default)]
    pub attack: Option<Attack>,
}

fn default_tick_len() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub duration: Tick,
    #[serde(default = "default_tick_len")]
    pub tick_len: u64,
    pub device_schedule: Vec<SchedulePhase>,
    pub apps: Vec<AppSpec>,
    #[serde(default)]
    pub reassess_interval: Option<Tick>,
}

impl Scenario {
    /// Schedule must cover `[0, duration)` contiguously; attacks must start
    /// inside the run; behavior parameters must be sane.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut phases = self.device_schedule.clone();
        phases.sort_by_key(|p| p.start_tick);
        if self.duration > 0 {
            if phases.is_empty() {
                return Err(SimError::Scenario("device_schedule is empty".into()));
            }
            if phases[0].start_tick != 0 {
                return Err(SimError::Scenario(
                    "device_schedule must start at tick 0".into(),
                ));
            }
            for pair in phases.windows(2) {
                if pair[0].end_tick != pair[1].start_tick {
                    return Err(SimError::Scenario(format!(
                        "device_schedule has a gap or overlap at tick {}",
                        pair[0].end_tick
                    )));
                }
            }
            let last = phases.last().expect("non-empty");
            if last.end_tick != self.duration {
                return Err(SimError::Scenario(format!(
                    "device_schedule ends at {} but duration is {}",
                    last.end_tick, self.duration
                )));
            }
        }
        for phase in &phases {
            if phase.start_tick >= phase.end_tick {
                return Err(SimError::Scenario(format!(
                    "schedule phase [{}, {}) is empty or inverted",
                    phase.start_tick, phase.end_tick
                )));
            }
        }

        let mut seen = std::collections::BTreeSet::new();
        for app in &self.apps {
            app.manifest
                .validate()
                .map_err(|e| SimError::Scenario(format!("manifest: {e}")))?;
            if !seen.insert(app.manifest.app_id.clone()) {
                return Err(SimError::Scenario(format!(
                    "duplicate app_id {:?}",
                    app.manifest.app_id
                )));
            }
            let b = &app.behavior;
            for (name, v) in [
                ("cpu_std", b.cpu_std),
                ("mem_std", b.mem_std),
                ("flows_per_window", b.flows_per_window),
                ("up_bytes_mean", b.up_bytes_mean),
                ("down_bytes_mean", b.down_bytes_mean),
            ] {
                if !v.is_finite() || v < 0.0 {
                    return Err(SimError::Scenario(format!(
                        "{}: {name} must be finite and non-negative",
                        app.manifest.app_id
                    )));
                }
            }
            if b.flows_per_window > 0.0 && b.host_pool.is_empty() {
                return Err(SimError::Scenario(format!(
                    "{}: flows configured but host_pool is empty",
                    app.manifest.app_id
                )));
            }
            if let Some(attack) = &app.attack {
                if attack.start_tick() >= self.duration {
                    return Err(SimError::Scenario(format!(
                        "{}: attack starts at {} but duration is {}",
                        app.manifest.app_id,
                        attack.start_tick(),
                        self.duration
                    )));
                }
                if let Attack::Beacon { period, .. } = attack {
                    if *period == 0 {
                        return Err(SimError::Scenario(format!(
                            "{}: beacon period must be positive",
                            app.manifest.app_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn state_at(&self, tick: Tick) -> DeviceState {
        self.device_schedule
            .iter()
            .find(|p| tick >= p.start_tick && tick < p.end_tick)
            .map(|p| p.state)
            .unwrap_or(DeviceState::Active)
    }
}

/// Events and flows an attack adds at one tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackDelta {
    pub api_events: Vec<ApiCallEvent>,
    pub flows: Vec<FlowRecord>,
}

/// Deterministic attack traffic for `tick`. Exfiltration spreads its
/// per-window budget evenly across the window's ticks.
pub fn attack_deltas(app_id: &str, attack: &Attack, tick: Tick, window_len: Tick) -> AttackDelta {
    let mut delta = AttackDelta::default();
    match attack {
        Attack::Exfiltration {
            start_tick,
            bytes_per_window,
            ratio,
            host,
        } => {
            if tick >= *start_tick {
                let host = host
                    .clone()
                    .unwrap_or_else(|| format!("exfil.{app_id}.example"));
                let up = bytes_per_window / window_len.max(1);
                let down = if *ratio > 0.0 {
                    (up as f64 / ratio).round() as u64
                } else {
                    0
                };
                delta.flows.push(FlowRecord {
                    tick,
                    app_id: app_id.to_string(),
                    dst_host: host.clone(),
                    url: Some(format!("https://{host}/upload")),
                    up_bytes: up,
                    down_bytes: down,
                });
            }
        }
        Attack::Beacon {
            start_tick,
            period,
            up_bytes,
            down_bytes,
            host,
        } => {
            if tick >= *start_tick && (tick - start_tick).is_multiple_of(*period) {
                let host = host
                    .clone()
                    .unwrap_or_else(|| format!("beacon.{app_id}.example"));
                delta.flows.push(FlowRecord {
                    tick,
                    app_id: app_id.to_string(),
                    dst_host: host.clone(),
                    url: Some(format!("https://{host}/ping")),
                    up_bytes: *up_bytes,
                    down_bytes: *down_bytes,
                });
            }
        }
        Attack::RootAbuse { start_tick } => {
            if tick == *start_tick {
                for api in [ApiKind::RootAccess, ApiKind::ExecShell] {
                    delta.api_events.push(ApiCallEvent {
                        tick,
                        app_id: app_id.to_string(),
                        api,
                    });
                }
            }
        }
    }
    delta
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowCounters {
    pub flows_generated: u64,
    pub flows_delivered: u64,
    pub flows_dropped_blocked: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Detected malicious apps / malicious apps; absent without attacks.
    pub detection_rate: Option<f64>,
    /// Benign apps with at least one verdict / benign apps; absent without
    /// benign apps.
    pub scenario_false_alarm_rate: Option<f64>,
    /// Mean of (first verdict tick - attack start tick) over detected
    /// attacks.
    pub mean_detection_latency_ticks: Option<f64>,
}

/// Telemetry the detectors actually saw (post-termination, post-blocking).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub delivered: Vec<TelemetryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: Scenario,
    pub mode: PolicyMode,
    pub assessments: Vec<RiskAssessment>,
    pub verdicts: Vec<DetectionVerdict>,
    pub actions: Vec<PreventionAction>,
    pub metrics: SimMetrics,
    pub counters: FlowCounters,
    pub audit: Vec<AuditRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<SimTrace>,
}

/// Knobs that are not part of the scenario itself.
pub struct SimOptions {
    pub hids_config: HidsConfig,
    pub nids_config: NidsConfig,
    pub initial_overrides: OverrideSet,
    pub collect_trace: bool,
    pub audit_sink: Option<Box<dyn Write + Send>>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            hids_config: HidsConfig::default(),
            nids_config: NidsConfig::default(),
            initial_overrides: OverrideSet::new(),
            collect_trace: false,
            audit_sink: None,
        }
    }
}

/// Independent RNG stream per `(scenario seed, app id)`.
fn app_rng(seed: u64, app_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(app_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn sample_poisson(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(rate).expect("positive finite rate");
    dist.sample(rng) as u64
}

struct FlowDelivery<'a> {
    nids: &'a mut NidsDetector,
    watchlist: &'a Watchlist,
    effects: &'a EffectSet,
    counters: &'a mut FlowCounters,
    trace: Option<&'a mut SimTrace>,
}

impl FlowDelivery<'_> {
    fn deliver(&mut self, flow: FlowRecord) -> Result<(), StreamOrderError> {
        self.counters.flows_generated += 1;
        if self.effects.is_blocked(&flow.dst_host) {
            self.counters.flows_dropped_blocked += 1;
            return Ok(());
        }
        self.counters.flows_delivered += 1;
        if let Some(trace) = self.trace.as_deref_mut() {
            trace.delivered.push(TelemetryRecord::Flow {
                t: flow.tick,
                app: flow.app_id.clone(),
                host: flow.dst_host.clone(),
                url: flow.url.clone(),
                up: flow.up_bytes,
                down: flow.down_bytes,
            });
        }
        self.nids.ingest_flow(flow, self.watchlist)
    }
}

pub fn run_scenario(
    scenario: &Scenario,
    bundle: &ModelBundle,
    mode: PolicyMode,
    prompter: &mut dyn Prompter,
    options: SimOptions,
) -> Result<SimReport, SimError> {
    scenario.validate()?;
    bundle.validate()?;

    let hids_len = options.hids_config.baseline.window_len;
    let nids_len = options.nids_config.baseline.window_len;
    let mut watchlist = Watchlist::new();
    let mut hids = HidsDetector::new(options.hids_config);
    let mut nids = NidsDetector::new(options.nids_config);
    let mut engine = PreventionEngine::new(options.initial_overrides, mode, prompter);
    let mut audit = match options.audit_sink {
        Some(sink) => AuditLog::with_sink(sink),
        None => AuditLog::in_memory(),
    };
    let mut effects = EffectSet::default();
    let mut counters = FlowCounters::default();
    let mut trace = options.collect_trace.then(SimTrace::default);

    let mut rngs: BTreeMap<String, ChaCha8Rng> = scenario
        .apps
        .iter()
        .map(|app| {
            (
                app.manifest.app_id.clone(),
                app_rng(scenario.seed, &app.manifest.app_id),
            )
        })
        .collect();

    let mut assessments = Vec::new();
    let mut verdicts: Vec<DetectionVerdict> = Vec::new();
    let mut actions: Vec<PreventionAction> = Vec::new();

    for tick in 0..scenario.duration {
        let reassess = scenario
            .reassess_interval
            .is_some_and(|k| k > 0 && tick > 0 && tick % k == 0);
        if tick == 0 || reassess {
            for app in &scenario.apps {
                let app_id = &app.manifest.app_id;
                if effects.is_terminated(app_id) {
                    continue;
                }
                let assessment = assess(&app.manifest, bundle, tick)?;
                watchlist.apply_assessment(&assessment);
                if watchlist.is_monitored(app_id) {
                    watchlist.set_override(app_id, engine.overrides().allow_active(app_id));
                }
                assessments.push(assessment);
            }
        }

        let state = scenario.state_at(tick);
        for app in &scenario.apps {
            let app_id = &app.manifest.app_id;
            if effects.is_terminated(app_id) {
                continue;
            }
            let rng = rngs.get_mut(app_id).expect("rng per app");

            let cpu = Normal::new(app.behavior.cpu_mean, app.behavior.cpu_std)
                .expect("validated std")
                .sample(rng);
            let mem = Normal::new(app.behavior.mem_mean, app.behavior.mem_std)
                .expect("validated std")
                .sample(rng);
            let sample = ResourceSample::clamped(tick, app_id.clone(), cpu, mem);
            if let Some(trace) = trace.as_mut() {
                trace.delivered.push(TelemetryRecord::Res {
                    t: tick,
                    app: app_id.clone(),
                    cpu: sample.cpu_pct,
                    mem: sample.mem_mb,
                });
            }
            hids.ingest_resource(sample, &watchlist)?;

            let rate = app.behavior.flows_per_window / nids_len.max(1) as f64;
            let flow_count = sample_poisson(rng, rate);
            let mut benign_flows = Vec::with_capacity(flow_count as usize);
            for _ in 0..flow_count {
                let host =
                    app.behavior.host_pool[rng.gen_range(0..app.behavior.host_pool.len())].clone();
                benign_flows.push(FlowRecord {
                    tick,
                    app_id: app_id.clone(),
                    dst_host: host.clone(),
                    url: Some(format!("https://{host}/api")),
                    up_bytes: app.behavior.up_bytes_mean.round() as u64,
                    down_bytes: app.behavior.down_bytes_mean.round() as u64,
                });
            }

            let delta = match &app.attack {
                Some(attack) => attack_deltas(app_id, attack, tick, nids_len),
                None => AttackDelta::default(),
            };
            for event in delta.api_events {
                if let Some(trace) = trace.as_mut() {
                    trace.delivered.push(TelemetryRecord::Api {
                        t: tick,
                        app: app_id.clone(),
                        api: event.api.as_str().to_string(),
                    });
                }
                hids.ingest_api(event, &watchlist)?;
            }

            let mut delivery = FlowDelivery {
                nids: &mut nids,
                watchlist: &watchlist,
                effects: &effects,
                counters: &mut counters,
                trace: trace.as_mut(),
            };
            for flow in benign_flows.into_iter().chain(delta.flows) {
                delivery.deliver(flow)?;
            }
        }

        let mut fresh: Vec<DetectionVerdict> = Vec::new();
        if (tick + 1) % hids_len == 0 {
            fresh.extend(
                hids.close_windows(tick + 1, state)
                    .into_iter()
                    .map(DetectionVerdict::Hids),
            );
        }
        if (tick + 1) % nids_len == 0 {
            fresh.extend(
                nids.close_windows(tick + 1, state)
                    .into_iter()
                    .map(DetectionVerdict::Nids),
            );
        }
        for verdict in fresh {
            audit.record(verdict.tick(), AuditEvent::Verdict(verdict.clone()))?;
            let (action, new_override) = engine.decide(&verdict);
            if let Some(decision) = new_override {
                watchlist
                    .set_override(&decision.app_id, decision.decision == OverrideChoice::Allow);
                audit.record(decision.tick, AuditEvent::Override(decision))?;
            }
            audit.record(action.tick, AuditEvent::Action(action.clone()))?;
            apply(&action, &mut effects);
            verdicts.push(verdict);
            actions.push(action);
        }
    }

    let metrics = compute_metrics(scenario, &verdicts);
    Ok(SimReport {
        scenario: scenario.clone(),
        mode,
        assessments,
        verdicts,
        actions,
        metrics,
        counters,
        audit: audit.records().to_vec(),
        trace,
    })
}

fn compute_metrics(scenario: &Scenario, verdicts: &[DetectionVerdict]) -> SimMetrics {
    let mut malicious = 0usize;
    let mut detected = 0usize;
    let mut benign = 0usize;
    let mut benign_flagged = 0usize;
    let mut latencies = Vec::new();

    for app in &scenario.apps {
        let app_id = &app.manifest.app_id;
        match &app.attack {
            Some(attack) => {
                malicious += 1;
                let start = attack.start_tick();
                let first = verdicts
                    .iter()
                    .filter(|v| v.app_id() == app_id && v.tick() >= start)
                    .map(DetectionVerdict::tick)
                    .min();
                if let Some(first) = first {
                    detected += 1;
                    latencies.push((first - start) as f64);
                }
            }
            None => {
                benign += 1;
                if verdicts.iter().any(|v| v.app_id() == app_id) {
                    benign_flagged += 1;
                }
            }
        }
    }

    SimMetrics {
        detection_rate: (malicious > 0).then(|| detected as f64 / malicious as f64),
        scenario_false_alarm_rate: (benign > 0).then(|| benign_flagged as f64 / benign as f64),
        mean_detection_latency_ticks: (!latencies.is_empty())
            .then(|| latencies.iter().sum::<f64>() / latencies.len() as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub events: u64,
    pub elapsed_secs: f64,
    pub events_per_second: f64,
}

/// Pumps a synthetic telemetry stream through both detectors and reports
/// throughput. This is the one place wall-clock time is allowed.
pub fn run_throughput_bench(events: u64, seed: u64) -> BenchReport {
    use crate::evaluator::RiskLevel;

    let mut watchlist = Watchlist::new();
    for i in 0..4 {
        watchlist.apply_assessment(&RiskAssessment {
            app_id: format!("bench-{i}"),
            risk: RiskLevel::High,
            score: 0.9,
            model_id: "bench".into(),
            assessed_at: 0,
        });
    }
    let mut hids = HidsDetector::new(HidsConfig::default());
    let mut nids = NidsDetector::new(NidsConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window_len = HidsConfig::default().baseline.window_len;

    let start = std::time::Instant::now();
    let mut processed = 0u64;
    let mut tick: Tick = 0;
    while processed < events {
        let app = format!("bench-{}", rng.gen_range(0..4u8));
        match processed % 3 {
            0 => {
                let sample = ResourceSample::clamped(
                    tick,
                    app,
                    rng.gen_range(0.0..60.0),
                    rng.gen_range(50.0..400.0),
                );
                hids.ingest_resource(sample, &watchlist).expect("ordered");
            }
            1 => {
                let flow = FlowRecord {
                    tick,
                    app_id: app,
                    dst_host: format!("host-{}.example", rng.gen_range(0..8u8)),
                    url: None,
                    up_bytes: rng.gen_range(64..4096),
                    down_bytes: rng.gen_range(64..16384),
                };
                nids.ingest_flow(flow, &watchlist).expect("ordered");
            }
            _ => {
                let event = ApiCallEvent {
                    tick,
                    app_id: app,
                    api: ApiKind::Other("query_state".into()),
                };
                hids.ingest_api(event, &watchlist).expect("ordered");
            }
        }
        processed += 1;
        if processed.is_multiple_of(16) {
            tick += 1;
            if tick.is_multiple_of(window_len) {
                hids.close_windows(tick, DeviceState::Active);
                nids.close_windows(tick, DeviceState::Active);
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    BenchReport {
        events: processed,
        elapsed_secs: elapsed,
        events_per_second: processed as f64 / elapsed,
    }
}
