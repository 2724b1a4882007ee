//! Device-side store of suspicious apps.
//!
//! Only watchlisted apps are monitored by the detection engines. High- and
//! medium-risk assessments insert or refresh an entry; a low-risk
//! assessment removes it. A user override keeps the app monitored but
//! marks enforcement as suppressed.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{RiskAssessment, RiskLevel};
use crate::telemetry::Tick;

#[derive(Debug, Error)]
pub enum WatchlistError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One suspicious app. `risk` is always high or medium; low-risk apps are
/// never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchlistEntry {
    pub app_id: String,
    pub risk: RiskLevel,
    pub assessed_at: Tick,
    pub override_active: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Watchlist {
    entries: BTreeMap<String, WatchlistEntry>,
}

impl Watchlist {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one assessment: high/medium inserts or updates (preserving
    /// any override flag), low removes.
    pub fn apply_assessment(&mut self, assessment: &RiskAssessment) {
        match assessment.risk {
            RiskLevel::High | RiskLevel::Medium => {
                match self.entries.entry(assessment.app_id.clone()) {
                    Entry::Occupied(mut slot) => {
                        let entry = slot.get_mut();
                        entry.risk = assessment.risk;
                        entry.assessed_at = assessment.assessed_at;
                    }
                    Entry::Vacant(slot) => {
                        slot.insert(WatchlistEntry {
                            app_id: assessment.app_id.clone(),
                            risk: assessment.risk,
                            assessed_at: assessment.assessed_at,
                            override_active: false,
                        });
                    }
                }
            }
            RiskLevel::Low => {
                self.entries.remove(&assessment.app_id);
            }
        }
    }

    /// True iff the app has an entry. Overrides suppress enforcement, not
    /// monitoring, so they do not affect this.
    pub fn is_monitored(&self, app_id: &str) -> bool {
        self.entries.contains_key(app_id)
    }

    /// Sets the override flag on an existing entry; false if the app is not
    /// watchlisted.
    pub fn set_override(&mut self, app_id: &str, active: bool) -> bool {
        match self.entries.get_mut(app_id) {
            Some(entry) => {
                entry.override_active = active;
                true
            }
            None => false,
        }
    }

    pub fn get(&self, app_id: &str) -> Option<&WatchlistEntry> {
        self.entries.get(app_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &WatchlistEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn write_jsonl<W: Write>(watchlist: &Watchlist, mut out: W) -> Result<(), WatchlistError> {
    for entry in watchlist.entries() {
        serde_json::to_writer(&mut out, entry)
            .map_err(|e| WatchlistError::Integrity(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Watchlist, WatchlistError> {
    let mut watchlist = Watchlist::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let entry: WatchlistEntry =
            serde_json::from_str(&line).map_err(|e| WatchlistError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if entry.risk == RiskLevel::Low {
            return Err(WatchlistError::Integrity(format!(
                "entry {:?} has risk low; low-risk apps are never watchlisted",
                entry.app_id
            )));
        }
        if watchlist.entries.contains_key(&entry.app_id) {
            return Err(WatchlistError::Integrity(format!(
                "duplicate app_id {:?}",
                entry.app_id
            )));
        }
        watchlist.entries.insert(entry.app_id.clone(), entry);
    }
    Ok(watchlist)
}

pub fn save_watchlist(watchlist: &Watchlist, path: &Path) -> Result<(), WatchlistError> {
    let mut file = BufWriter::new(File::create(path)?);
    write_jsonl(watchlist, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_watchlist(path: &Path) -> Result<Watchlist, WatchlistError> {
    read_jsonl(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assessment(app_id: &str, risk: RiskLevel, at: Tick) -> RiskAssessment {
        let score = match risk {
            RiskLevel::High => 0.9,
            RiskLevel::Medium => 0.5,
            RiskLevel::Low => 0.1,
        };
        RiskAssessment {
            app_id: app_id.into(),
            risk,
            score,
            model_id: "m".into(),
            assessed_at: at,
        }
    }

    #[test]
    fn high_assessment_creates_entry() {
        let mut wl = Watchlist::new();
        wl.apply_assessment(&assessment("a", RiskLevel::High, 1));
        assert_eq!(wl.len(), 1);
        assert!(wl.is_monitored("a"));
    }

    #[test]
    fn low_reassessment_removes_entry() {
        let mut wl = Watchlist::new();
        wl.apply_assessment(&assessment("a", RiskLevel::High, 1));
        wl.apply_assessment(&assessment("a", RiskLevel::Low, 2));
        assert!(!wl.is_monitored("a"));
        assert!(wl.is_empty());
    }

    #[test]
    fn medium_to_high_updates_in_place() {
        let mut wl = Watchlist::new();
        wl.apply_assessment(&assessment("a", RiskLevel::Medium, 1));
        wl.apply_assessment(&assessment("a", RiskLevel::High, 2));
        assert_eq!(wl.len(), 1);
        let entry = wl.get("a").unwrap();
        assert_eq!(entry.risk, RiskLevel::High);
        assert_eq!(entry.assessed_at, 2);
    }

    #[test]
    fn reassessment_preserves_override_flag() {
        let mut wl = Watchlist::new();
        wl.apply_assessment(&assessment("a", RiskLevel::Medium, 1));
        assert!(wl.set_override("a", true));
        wl.apply_assessment(&assessment("a", RiskLevel::High, 2));
        assert!(wl.get("a").unwrap().override_active);
    }

    #[test]
    fn overridden_app_is_still_monitored() {
        let mut wl = Watchlist::new();
        wl.apply_assessment(&assessment("a", RiskLevel::High, 1));
        wl.set_override("a", true);
        assert!(wl.is_monitored("a"));
    }

    #[test]
    fn unknown_app_is_not_monitored() {
        assert!(!Watchlist::new().is_monitored("ghost"));
    }

    #[test]
    fn round_trip_identity() {
        let mut wl = Watchlist::new();
        wl.apply_assessment(&assessment("a", RiskLevel::High, 1));
        wl.apply_assessment(&assessment("b", RiskLevel::Medium, 2));
        wl.set_override("b", true);
        let mut buf = Vec::new();
        write_jsonl(&wl, &mut buf).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), wl);
    }

    #[test]
    fn empty_file_loads_empty_watchlist() {
        assert!(read_jsonl(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn duplicate_lines_are_an_integrity_error() {
        let line = r#"{"app_id":"a","risk":"high","assessed_at":1,"override_active":false}"#;
        let doubled = format!("{line}\n{line}\n");
        assert!(matches!(
            read_jsonl(doubled.as_bytes()),
            Err(WatchlistError::Integrity(_))
        ));
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = "{\"app_id\":\"a\",\"risk\":\"high\",\"assessed_at\":1,\"override_active\":false}\nnot json\n";
        match read_jsonl(text.as_bytes()) {
            Err(WatchlistError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn stored_low_risk_entry_is_rejected() {
        let line = r#"{"app_id":"a","risk":"low","assessed_at":1,"override_active":false}"#;
        assert!(matches!(
            read_jsonl(format!("{line}\n").as_bytes()),
            Err(WatchlistError::Integrity(_))
        ));
    }

    proptest! {
        // after any assessment sequence: no low-risk entries, and
        // is_monitored equals "last assessment was medium-or-higher"
        #[test]
        fn monitoring_tracks_latest_assessment(
            seq in proptest::collection::vec((0usize..4, 0u8..3), 0..60)
        ) {
            let apps = ["a", "b", "c", "d"];
            let mut wl = Watchlist::new();
            let mut last: std::collections::BTreeMap<&str, RiskLevel> = Default::default();
            for (tick, (app_idx, risk_idx)) in seq.into_iter().enumerate() {
                let risk = match risk_idx {
                    0 => RiskLevel::Low,
                    1 => RiskLevel::Medium,
                    _ => RiskLevel::High,
                };
                let app = apps[app_idx];
                wl.apply_assessment(&assessment(app, risk, tick as Tick));
                last.insert(app, risk);
            }
            for entry in wl.entries() {
                prop_assert!(entry.risk >= RiskLevel::Medium);
            }
            for app in apps {
                let expected = last.get(app).is_some_and(|r| *r >= RiskLevel::Medium);
                prop_assert_eq!(wl.is_monitored(app), expected);
            }
        }
    }
}
