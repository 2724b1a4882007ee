//! Shared telemetry primitives: simulation time, device activity state,
//! stream ordering, and the JSONL record format the detectors and the
//! simulator exchange.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Discrete simulation time. Wall-clock time never enters the detection
/// path.
pub type Tick = u64;

/// Whether the owner is using the device. Supplied exogenously by the
/// scenario schedule; idle devices get tighter anomaly thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceState {
    Active,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("stream went backwards: tick {got} after tick {floor} was already processed")]
pub struct StreamOrderError {
    pub floor: Tick,
    pub got: Tick,
}

/// One line of the telemetry JSONL interchange format:
///
/// ```text
/// {"t":3,"app":"app-0001","kind":"api","api":"root_access"}
/// {"t":3,"app":"app-0001","kind":"res","cpu":12.5,"mem":180.0}
/// {"t":3,"app":"app-0001","kind":"flow","host":"cdn.example.net","url":null,"up":640,"down":4096}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TelemetryRecord {
    Api {
        t: Tick,
        app: String,
        api: String,
    },
    Res {
        t: Tick,
        app: String,
        cpu: f64,
        mem: f64,
    },
    Flow {
        t: Tick,
        app: String,
        host: String,
        url: Option<String>,
        up: u64,
        down: u64,
    },
}

impl TelemetryRecord {
    pub fn tick(&self) -> Tick {
        match self {
            TelemetryRecord::Api { t, .. }
            | TelemetryRecord::Res { t, .. }
            | TelemetryRecord::Flow { t, .. } => *t,
        }
    }

    pub fn app_id(&self) -> &str {
        match self {
            TelemetryRecord::Api { app, .. }
            | TelemetryRecord::Res { app, .. }
            | TelemetryRecord::Flow { app, .. } => app,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_wire_format_is_stable() {
        let api = TelemetryRecord::Api {
            t: 3,
            app: "a".into(),
            api: "root_access".into(),
        };
        assert_eq!(
            serde_json::to_string(&api).unwrap(),
            r#"{"kind":"api","t":3,"app":"a","api":"root_access"}"#
        );
        let flow = TelemetryRecord::Flow {
            t: 4,
            app: "a".into(),
            host: "h".into(),
            url: None,
            up: 10,
            down: 20,
        };
        let text = serde_json::to_string(&flow).unwrap();
        assert!(text.contains(r#""url":null"#));
        let parsed: TelemetryRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, flow);
    }
}
