//! Labeled synthetic corpus of app manifests.
//!
//! Replaces market crawling and scan-service labeling with a seeded
//! generator over a fixed token universe: 40 permissions (16 of them
//! "dangerous"), 15 intent actions and 10 hardware features. The malicious
//! class requests dangerous permissions at an inflated rate, which gives the
//! corpus tunable class separability.
//!
//! Storage is line-oriented JSON (one labeled manifest per line), and
//! splitting is stratified by label so desk-scale test sets never degenerate
//! to a single class.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Permission token universe. The first [`DANGEROUS_PERMISSION_COUNT`]
/// entries form the dangerous subset the malicious profile inflates.
pub const PERMISSIONS: [&str; 40] = [
    "SEND_SMS",
    "RECEIVE_SMS",
    "READ_SMS",
    "READ_CONTACTS",
    "WRITE_CONTACTS",
    "READ_CALL_LOG",
    "WRITE_CALL_LOG",
    "CALL_PHONE",
    "PROCESS_OUTGOING_CALLS",
    "RECORD_AUDIO",
    "ACCESS_FINE_LOCATION",
    "READ_PHONE_STATE",
    "SYSTEM_ALERT_WINDOW",
    "REQUEST_INSTALL_PACKAGES",
    "WRITE_SETTINGS",
    "RECEIVE_BOOT_COMPLETED",
    "INTERNET",
    "ACCESS_NETWORK_STATE",
    "ACCESS_WIFI_STATE",
    "CHANGE_WIFI_STATE",
    "BLUETOOTH",
    "BLUETOOTH_ADMIN",
    "NFC",
    "VIBRATE",
    "WAKE_LOCK",
    "FLASHLIGHT",
    "SET_WALLPAPER",
    "READ_EXTERNAL_STORAGE",
    "WRITE_EXTERNAL_STORAGE",
    "CAMERA",
    "ACCESS_COARSE_LOCATION",
    "GET_ACCOUNTS",
    "USE_FINGERPRINT",
    "BODY_SENSORS",
    "FOREGROUND_SERVICE",
    "REQUEST_IGNORE_BATTERY_OPTIMIZATIONS",
    "EXPAND_STATUS_BAR",
    "INSTALL_SHORTCUT",
    "UNINSTALL_SHORTCUT",
    "READ_CALENDAR",
];

pub const DANGEROUS_PERMISSION_COUNT: usize = 16;

pub const INTENTS: [&str; 15] = [
    "ACTION_MAIN",
    "ACTION_VIEW",
    "ACTION_SEND",
    "ACTION_EDIT",
    "ACTION_PICK",
    "ACTION_DIAL",
    "ACTION_CALL",
    "ACTION_SENDTO",
    "ACTION_BOOT_COMPLETED",
    "ACTION_PACKAGE_ADDED",
    "ACTION_PACKAGE_REMOVED",
    "ACTION_POWER_CONNECTED",
    "ACTION_USER_PRESENT",
    "ACTION_NEW_OUTGOING_CALL",
    "ACTION_SMS_RECEIVED",
];

pub const HARDWARE_FEATURES: [&str; 10] = [
    "camera",
    "camera.autofocus",
    "location.gps",
    "wifi",
    "bluetooth",
    "telephony",
    "nfc",
    "sensor.accelerometer",
    "microphone",
    "touchscreen",
];

/// Dangerous permission tokens (the subset the malicious profile inflates).
pub fn dangerous_permissions() -> &'static [&'static str] {
    &PERMISSIONS[..DANGEROUS_PERMISSION_COUNT]
}

const PACKAGE_VENDORS: [&str; 8] = [
    "lumino",
    "brightapps",
    "pocketlab",
    "nimbus",
    "quickware",
    "softpeak",
    "appforge",
    "zenmobi",
];
const PACKAGE_WORDS: [&str; 10] = [
    "notes", "weather", "player", "scanner", "chat", "wallet", "fitness", "launcher", "photo",
    "browser",
];
const MALWARE_FAMILIES: [&str; 6] = [
    "basebridge",
    "droidkungfu",
    "geinimi",
    "golddream",
    "plankton",
    "fakeinst",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid generation profile: {0}")]
    Profile(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus must contain both benign and malicious entries")]
    InsufficientClasses,
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Declared surface of one app, as read from its manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppManifest {
    pub app_id: String,
    pub package_name: String,
    pub permissions: BTreeSet<String>,
    pub intents: BTreeSet<String>,
    pub hardware_features: BTreeSet<String>,
}

impl AppManifest {
    /// Checks the structural invariants: non-empty app id, and every token
    /// non-empty without whitespace.
    pub fn validate(&self) -> Result<(), String> {
        if self.app_id.is_empty() {
            return Err("app_id must be non-empty".into());
        }
        for set in [&self.permissions, &self.intents, &self.hardware_features] {
            for token in set {
                if token.is_empty() {
                    return Err(format!("{}: empty token", self.app_id));
                }
                if token.chars().any(char::is_whitespace) {
                    return Err(format!(
                        "{}: token {token:?} contains whitespace",
                        self.app_id
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        matches!(self, Label::Malicious)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppLabel {
    pub app_id: String,
    pub label: Label,
    pub family: Option<String>,
}

/// A labeled manifest collection with pairwise-distinct app ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    entries: Vec<(AppManifest, AppLabel)>,
}

impl Corpus {
    pub fn new(entries: Vec<(AppManifest, AppLabel)>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for (manifest, label) in &entries {
            manifest.validate().map_err(CorpusError::Integrity)?;
            if manifest.app_id != label.app_id {
                return Err(CorpusError::Integrity(format!(
                    "label app_id {:?} does not match manifest app_id {:?}",
                    label.app_id, manifest.app_id
                )));
            }
            if !seen.insert(manifest.app_id.clone()) {
                return Err(CorpusError::Integrity(format!(
                    "duplicate app_id {:?}",
                    manifest.app_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(AppManifest, AppLabel)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, app_id: &str) -> Option<&(AppManifest, AppLabel)> {
        self.entries.iter().find(|(m, _)| m.app_id == app_id)
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.entries
            .iter()
            .filter(|(_, l)| l.label == label)
            .count()
    }
}

/// Train/test partition of corpus app ids, stratified by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Per-class token-inclusion probabilities for the generator.
///
/// The malicious class draws dangerous permissions at
/// `benign_dangerous * dangerous_separation` (clamped to 1.0); all other
/// probabilities are shared between classes by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationProfile {
    pub benign_common: f64,
    pub benign_dangerous: f64,
    pub malicious_common: f64,
    pub dangerous_separation: f64,
}

impl Default for GenerationProfile {
    fn default() -> Self {
        Self {
            benign_common: 0.30,
            benign_dangerous: 0.20,
            malicious_common: 0.30,
            dangerous_separation: 4.0,
        }
    }
}

impl GenerationProfile {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, p) in [
            ("benign_common", self.benign_common),
            ("benign_dangerous", self.benign_dangerous),
            ("malicious_common", self.malicious_common),
        ] {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(CorpusError::Profile(format!(
                    "{name} = {p} is outside [0, 1]"
                )));
            }
        }
        if !self.dangerous_separation.is_finite() || self.dangerous_separation < 0.0 {
            return Err(CorpusError::Profile(format!(
                "dangerous_separation = {} must be finite and non-negative",
                self.dangerous_separation
            )));
        }
        Ok(())
    }

    pub fn malicious_dangerous(&self) -> f64 {
        (self.benign_dangerous * self.dangerous_separation).min(1.0)
    }

    fn inclusion_probability(&self, label: Label, dangerous: bool) -> f64 {
        match (label, dangerous) {
            (Label::Benign, true) => self.benign_dangerous,
            (Label::Benign, false) => self.benign_common,
            (Label::Malicious, true) => self.malicious_dangerous(),
            (Label::Malicious, false) => self.malicious_common,
        }
    }
}

/// Generates `n_benign + n_malicious` labeled manifests, deterministic for
/// `(seed, counts, profile)`.
pub fn generate_corpus(
    seed: u64,
    n_benign: usize,
    n_malicious: usize,
    profile: &GenerationProfile,
) -> Result<Corpus, CorpusError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n_benign + n_malicious);
    for i in 0..n_benign + n_malicious {
        let label = if i < n_benign {
            Label::Benign
        } else {
            Label::Malicious
        };
        let app_id = format!("app-{i:04}");
        let vendor = PACKAGE_VENDORS[rng.gen_range(0..PACKAGE_VENDORS.len())];
        let word = PACKAGE_WORDS[rng.gen_range(0..PACKAGE_WORDS.len())];
        let package_name = format!("com.{vendor}.{word}{i:03}");

        let mut permissions = BTreeSet::new();
        for (idx, perm) in PERMISSIONS.iter().enumerate() {
            let dangerous = idx < DANGEROUS_PERMISSION_COUNT;
            if rng.gen_bool(profile.inclusion_probability(label, dangerous)) {
                permissions.insert((*perm).to_string());
            }
        }
        let mut intents = BTreeSet::new();
        for intent in INTENTS {
            if rng.gen_bool(profile.inclusion_probability(label, false)) {
                intents.insert(intent.to_string());
            }
        }
        let mut hardware_features = BTreeSet::new();
        for hw in HARDWARE_FEATURES {
            if rng.gen_bool(profile.inclusion_probability(label, false)) {
                hardware_features.insert(hw.to_string());
            }
        }

        let family = match label {
            Label::Benign => None,
            Label::Malicious => {
                Some(MALWARE_FAMILIES[rng.gen_range(0..MALWARE_FAMILIES.len())].to_string())
            }
        };

        entries.push((
            AppManifest {
                app_id: app_id.clone(),
                package_name,
                permissions,
                intents,
                hardware_features,
            },
            AppLabel {
                app_id,
                label,
                family,
            },
        ));
    }
    Corpus::new(entries)
}

/// Splits corpus ids into train/test, stratified per label with
/// `round(train_fraction * class_size)` training entries per class.
/// Output id lists are sorted lexicographically.
pub fn split_corpus(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
) -> Result<DataSplit, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    let mut benign: Vec<&str> = Vec::new();
    let mut malicious: Vec<&str> = Vec::new();
    for (manifest, label) in corpus.entries() {
        match label.label {
            Label::Benign => benign.push(&manifest.app_id),
            Label::Malicious => malicious.push(&manifest.app_id),
        }
    }
    if benign.is_empty() || malicious.is_empty() {
        return Err(CorpusError::InsufficientClasses);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for class_ids in [&mut benign, &mut malicious] {
        class_ids.shuffle(&mut rng);
        let n_train = (train_fraction * class_ids.len() as f64).round() as usize;
        for (i, id) in class_ids.iter().enumerate() {
            if i < n_train {
                train_ids.push((*id).to_string());
            } else {
                test_ids.push((*id).to_string());
            }
        }
    }
    train_ids.sort();
    test_ids.sort();
    Ok(DataSplit {
        train_ids,
        test_ids,
    })
}

/// Builds the sub-corpus containing exactly the given ids, in corpus order.
pub fn subset(corpus: &Corpus, ids: &[String]) -> Result<Corpus, CorpusError> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let entries: Vec<_> = corpus
        .entries()
        .iter()
        .filter(|(m, _)| wanted.contains(m.app_id.as_str()))
        .cloned()
        .collect();
    if entries.len() != wanted.len() {
        return Err(CorpusError::Integrity(
            "split references app ids missing from the corpus".into(),
        ));
    }
    Corpus::new(entries)
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    manifest: AppManifest,
    label: LineLabel,
}

#[derive(Serialize, Deserialize)]
struct LineLabel {
    label: Label,
    family: Option<String>,
}

/// Writes the corpus as JSONL, one `{"manifest":...,"label":...}` object per
/// line.
pub fn write_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> Result<(), CorpusError> {
    for (manifest, label) in corpus.entries() {
        let line = CorpusLine {
            manifest: manifest.clone(),
            label: LineLabel {
                label: label.label,
                family: label.family.clone(),
            },
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| CorpusError::Integrity(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSONL corpus, reporting the 1-based line number of the first
/// malformed line.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Corpus, CorpusError> {
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "blank line".into(),
            });
        }
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let app_id = parsed.manifest.app_id.clone();
        entries.push((
            parsed.manifest,
            AppLabel {
                app_id,
                label: parsed.label.label,
                family: parsed.label.family,
            },
        ));
    }
    Corpus::new(entries)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut file = BufWriter::new(File::create(path)?);
    write_jsonl(corpus, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    read_jsonl(File::open(path)?)
}

/// Hex SHA-256 of the corpus JSONL serialization; used to fingerprint the
/// training data inside persisted model bundles.
pub fn corpus_hash(corpus: &Corpus) -> String {
    use sha2::{Digest, Sha256};
    let mut bytes = Vec::new();
    write_jsonl(corpus, &mut bytes).expect("in-memory serialization cannot fail");
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}
