//! Prevention engine: verdicts become enforcement actions, users can
//! override, and everything lands in an append-only audit log.
//!
//! The mapping is fixed: host verdicts terminate the app, network verdicts
//! block the dominant offending host. An active allow-override downgrades
//! any action to notify-only; monitoring continues regardless. The audit
//! log replays deterministically; `(verdicts, overrides, mode)` fully
//! determine the action sequence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hids::HidsVerdict;
use crate::nids::NidsVerdict;
use crate::telemetry::Tick;

#[derive(Debug, Error)]
pub enum PreventionError {
    #[error("audit write failed: {0}")]
    Audit(#[from] std::io::Error),
    #[error("invalid policy file: {0}")]
    Policy(String),
    #[error("audit replay failed: {0}")]
    Replay(String),
}

/// A verdict from either detection engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DetectionVerdict {
    Hids(HidsVerdict),
    Nids(NidsVerdict),
}

impl DetectionVerdict {
    pub fn app_id(&self) -> &str {
        match self {
            DetectionVerdict::Hids(v) => &v.app_id,
            DetectionVerdict::Nids(v) => &v.app_id,
        }
    }

    pub fn tick(&self) -> Tick {
        match self {
            DetectionVerdict::Hids(v) => v.tick,
            DetectionVerdict::Nids(v) => v.tick,
        }
    }

    pub fn rule_name(&self) -> String {
        match self {
            DetectionVerdict::Hids(v) => format!(
                "hids:{}",
                match v.kind {
                    crate::hids::HidsVerdictKind::ResourceAnomaly => "resource_anomaly",
                    crate::hids::HidsVerdictKind::SuspiciousApi => "suspicious_api",
                }
            ),
            DetectionVerdict::Nids(v) => format!(
                "nids:{}",
                match v.rule {
                    crate::nids::NidsRule::UploadAnomaly => "upload_anomaly",
                    crate::nids::NidsRule::ExfilRatio => "exfil_ratio",
                    crate::nids::NidsRule::NewHostIdle => "new_host_idle",
                }
            ),
        }
    }

    pub fn reference(&self) -> VerdictRef {
        VerdictRef {
            app_id: self.app_id().to_string(),
            tick: self.tick(),
            rule: self.rule_name(),
        }
    }
}

/// Stable reference from an action back to its triggering verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRef {
    pub app_id: String,
    pub tick: Tick,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ActionKind {
    TerminateApp { app_id: String },
    BlockHost { host: String },
    NotifyOnly { app_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreventionAction {
    #[serde(flatten)]
    pub kind: ActionKind,
    pub tick: Tick,
    pub verdict: VerdictRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideChoice {
    Allow,
    Enforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideActor {
    UserPrompt,
    PolicyFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideDecision {
    pub app_id: String,
    pub decision: OverrideChoice,
    pub tick: Tick,
    pub actor: OverrideActor,
}

/// Latest override per app (later decisions replace earlier ones).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverrideSet {
    latest: BTreeMap<String, OverrideDecision>,
}

impl OverrideSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, decision: OverrideDecision) {
        self.latest.insert(decision.app_id.clone(), decision);
    }

    pub fn get(&self, app_id: &str) -> Option<&OverrideDecision> {
        self.latest.get(app_id)
    }

    pub fn allow_active(&self, app_id: &str) -> bool {
        self.get(app_id)
            .is_some_and(|d| d.decision == OverrideChoice::Allow)
    }

    /// Loads a JSON array of override decisions (the startup policy file).
    pub fn from_policy_reader<R: Read>(reader: R) -> Result<Self, PreventionError> {
        let decisions: Vec<OverrideDecision> =
            serde_json::from_reader(reader).map_err(|e| PreventionError::Policy(e.to_string()))?;
        let mut set = Self::new();
        for decision in decisions {
            set.apply(decision);
        }
        Ok(set)
    }

    pub fn from_policy_file(path: &Path) -> Result<Self, PreventionError> {
        Self::from_policy_reader(File::open(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Auto,
    Interactive,
}

/// Answers override prompts in interactive mode.
pub trait Prompter {
    fn ask(&mut self, verdict: &DetectionVerdict) -> OverrideChoice;
}

/// Canned prompt answers for tests and scripted runs; falls back to
/// enforce when the script runs out.
pub struct ScriptedPrompter {
    answers: Vec<OverrideChoice>,
    next: usize,
}

impl ScriptedPrompter {
    pub fn new(answers: Vec<OverrideChoice>) -> Self {
        Self { answers, next: 0 }
    }
}

impl Prompter for ScriptedPrompter {
    fn ask(&mut self, _verdict: &DetectionVerdict) -> OverrideChoice {
        let answer = self
            .answers
            .get(self.next)
            .copied()
            .unwrap_or(OverrideChoice::Enforce);
        self.next += 1;
        answer
    }
}

/// Asks on the console and waits up to `timeout` for `allow`/`enforce`;
/// anything else (including silence) enforces, so unattended runs fail
/// closed.
pub struct ConsolePrompter {
    pub timeout: std::time::Duration,
}

impl Default for ConsolePrompter {
    fn default() -> Self {
        Self {
            timeout: std::time::Duration::from_secs(30),
        }
    }
}

impl Prompter for ConsolePrompter {
    fn ask(&mut self, verdict: &DetectionVerdict) -> OverrideChoice {
        println!(
            "intrusion verdict {} for app {} at tick {}; allow or enforce? [enforce]",
            verdict.rule_name(),
            verdict.app_id(),
            verdict.tick()
        );
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let mut line = String::new();
            if std::io::stdin().read_line(&mut line).is_ok() {
                let _ = tx.send(line);
            }
        });
        match rx.recv_timeout(self.timeout) {
            Ok(line) if line.trim().eq_ignore_ascii_case("allow") => OverrideChoice::Allow,
            _ => OverrideChoice::Enforce,
        }
    }
}

/// The offending host of a network verdict: largest `up_bytes`, host name
/// breaking ties.
pub fn dominant_host(verdict: &NidsVerdict) -> Option<&str> {
    verdict
        .evidence
        .hosts
        .iter()
        .max_by(|a, b| {
            a.up_bytes
                .cmp(&b.up_bytes)
                .then_with(|| b.host.cmp(&a.host))
        })
        .map(|h| h.host.as_str())
}

/// Pure decision rule given the overrides already on record:
/// allow-override wins, otherwise host verdicts terminate and network
/// verdicts block.
pub fn decide(verdict: &DetectionVerdict, overrides: &OverrideSet) -> PreventionAction {
    let app_id = verdict.app_id().to_string();
    let kind = if overrides.allow_active(&app_id) {
        ActionKind::NotifyOnly { app_id }
    } else {
        match verdict {
            DetectionVerdict::Hids(_) => ActionKind::TerminateApp { app_id },
            DetectionVerdict::Nids(v) => match dominant_host(v) {
                Some(host) => ActionKind::BlockHost {
                    host: host.to_string(),
                },
                // evidence is never empty for a fired rule; notify as a
                // conservative fallback
                None => ActionKind::NotifyOnly { app_id },
            },
        }
    };
    PreventionAction {
        kind,
        tick: verdict.tick(),
        verdict: verdict.reference(),
    }
}

/// Cumulative enforcement effects on the simulated device.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectSet {
    pub terminated: std::collections::BTreeSet<String>,
    pub blocked_hosts: std::collections::BTreeSet<String>,
}

impl EffectSet {
    pub fn is_terminated(&self, app_id: &str) -> bool {
        self.terminated.contains(app_id)
    }

    pub fn is_blocked(&self, host: &str) -> bool {
        self.blocked_hosts.contains(host)
    }
}

/// Applies an action to the device-effect state. Notify-only changes
/// nothing.
pub fn apply(action: &PreventionAction, effects: &mut EffectSet) {
    match &action.kind {
        ActionKind::TerminateApp { app_id } => {
            effects.terminated.insert(app_id.clone());
        }
        ActionKind::BlockHost { host } => {
            effects.blocked_hosts.insert(host.clone());
        }
        ActionKind::NotifyOnly { .. } => {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Verdict(DetectionVerdict),
    Action(PreventionAction),
    Override(OverrideDecision),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sequence_no: u64,
    pub tick: Tick,
    #[serde(flatten)]
    pub event: AuditEvent,
}

/// Append-only audit trail. Records are kept in memory and, when a sink is
/// attached, mirrored as JSONL; a sink write failure is fatal because
/// enforcement without audit is disallowed.
pub struct AuditLog {
    records: Vec<AuditRecord>,
    sink: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog")
            .field("records", &self.records.len())
            .field("sink", &self.sink.is_some())
            .finish()
    }
}

impl Default for AuditLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            sink: None,
        }
    }

    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        Self {
            records: Vec::new(),
            sink: Some(sink),
        }
    }

    pub fn to_file(path: &Path) -> Result<Self, PreventionError> {
        Ok(Self::with_sink(Box::new(BufWriter::new(File::create(
            path,
        )?))))
    }

    pub fn record(&mut self, tick: Tick, event: AuditEvent) -> Result<u64, PreventionError> {
        let sequence_no = self.records.len() as u64;
        let record = AuditRecord {
            sequence_no,
            tick,
            event,
        };
        if let Some(sink) = &mut self.sink {
            serde_json::to_writer(&mut *sink, &record)
                .map_err(|e| PreventionError::Audit(std::io::Error::other(e)))?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.records.push(record);
        Ok(sequence_no)
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Serializes decision-making: holds the override state, prompts in
/// interactive mode, and emits the (action, new-override) pair for each
/// verdict.
pub struct PreventionEngine<'p> {
    overrides: OverrideSet,
    mode: PolicyMode,
    prompter: &'p mut dyn Prompter,
}

impl<'p> PreventionEngine<'p> {
    pub fn new(overrides: OverrideSet, mode: PolicyMode, prompter: &'p mut dyn Prompter) -> Self {
        Self {
            overrides,
            mode,
            prompter,
        }
    }

    pub fn overrides(&self) -> &OverrideSet {
        &self.overrides
    }

    /// Decides one verdict. In interactive mode an app without a recorded
    /// override triggers a prompt first; the answer becomes a new override
    /// that is returned for audit and applied before the action is chosen.
    pub fn decide(
        &mut self,
        verdict: &DetectionVerdict,
    ) -> (PreventionAction, Option<OverrideDecision>) {
        let mut new_override = None;
        if self.mode == PolicyMode::Interactive && self.overrides.get(verdict.app_id()).is_none() {
            let choice = self.prompter.ask(verdict);
            let decision = OverrideDecision {
                app_id: verdict.app_id().to_string(),
                decision: choice,
                tick: verdict.tick(),
                actor: OverrideActor::UserPrompt,
            };
            self.overrides.apply(decision.clone());
            new_override = Some(decision);
        }
        (decide(verdict, &self.overrides), new_override)
    }
}

/// Recomputes the action for every action record from the verdicts and
/// overrides that precede it. The result equals the recorded action
/// sequence iff the log is consistent with the decision rules.
pub fn replay_actions(records: &[AuditRecord]) -> Result<Vec<PreventionAction>, PreventionError> {
    let mut overrides = OverrideSet::new();
    let mut verdicts: BTreeMap<(String, Tick, String), DetectionVerdict> = BTreeMap::new();
    let mut actions = Vec::new();
    for record in records {
        match &record.event {
            AuditEvent::Override(decision) => overrides.apply(decision.clone()),
            AuditEvent::Verdict(verdict) => {
                let r = verdict.reference();
                verdicts.insert((r.app_id, r.tick, r.rule), verdict.clone());
            }
            AuditEvent::Action(action) => {
                let key = (
                    action.verdict.app_id.clone(),
                    action.verdict.tick,
                    action.verdict.rule.clone(),
                );
                let verdict = verdicts.get(&key).ok_or_else(|| {
                    PreventionError::Replay(format!(
                        "action at seq {} references verdict {key:?} that never appeared",
                        record.sequence_no
                    ))
                })?;
                actions.push(decide(verdict, &overrides));
            }
        }
    }
    Ok(actions)
}
