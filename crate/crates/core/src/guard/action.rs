//! Violation reports, the violation log and action dispatch.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::contract::ActionKind;

/// What kind of condition produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Distribution,
    Schema,
    Postcondition,
    Range,
}

/// One detected violation. Serialized as one line of the violation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub condition_name: String,
    pub kind: ReportKind,
    /// Detector probability for distribution checks, 1.0 for deterministic ones.
    pub p_violation: f64,
    pub action_taken: ActionKind,
    pub detail: serde_json::Value,
    pub batch_id: u64,
    /// ISO-8601 UTC with milliseconds.
    pub timestamp: String,
    /// Set when the report was attached to the output as uncertainty.
    pub propagated: bool,
}

pub fn utc_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug, thiserror::Error)]
#[error("violation log write failed: {0}")]
pub struct SinkFailure(pub String);

/// Destination of violation records. Appends are serialized internally.
pub trait ViolationSink: Send + Sync {
    fn record(&self, report: &ViolationReport) -> Result<(), SinkFailure>;
}

/// Append-only JSON-lines file.
pub struct JsonlSink {
    out: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JsonlSink {
            out: Mutex::new(BufWriter::new(file)),
        })
    }
}

impl ViolationSink for JsonlSink {
    fn record(&self, report: &ViolationReport) -> Result<(), SinkFailure> {
        let mut line = serde_json::to_string(report).map_err(|e| SinkFailure(e.to_string()))?;
        line.push('\n');
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        out.write_all(line.as_bytes())
            .and_then(|()| out.flush())
            .map_err(|e| SinkFailure(e.to_string()))
    }
}

/// Keeps records in memory.
#[derive(Default)]
pub struct MemorySink {
    records: Mutex<Vec<ViolationReport>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<ViolationReport> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl ViolationSink for MemorySink {
    fn record(&self, report: &ViolationReport) -> Result<(), SinkFailure> {
        self.records
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(report.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl ViolationSink for NullSink {
    fn record(&self, _report: &ViolationReport) -> Result<(), SinkFailure> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Continue,
    Reject,
}

#[derive(Debug)]
pub struct ActionOutcome {
    pub disposition: Disposition,
    /// The report as logged (with `action_taken` and `propagated` filled in).
    pub report: ViolationReport,
    /// Logging is best effort; a failure is passed back, not raised.
    pub sink_error: Option<SinkFailure>,
}

/// Log `report` under `action` and decide whether the guard continues.
pub fn apply_action(
    action: ActionKind,
    mut report: ViolationReport,
    sink: &dyn ViolationSink,
) -> ActionOutcome {
    report.action_taken = action;
    report.propagated = action == ActionKind::PropagateUncertainty;
    let sink_error = sink.record(&report).err();
    let disposition = match action {
        ActionKind::Exception => Disposition::Reject,
        ActionKind::LogWarning | ActionKind::PropagateUncertainty => Disposition::Continue,
    };
    ActionOutcome {
        disposition,
        report,
        sink_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ViolationReport {
        ViolationReport {
            condition_name: "Schema_Matches".into(),
            kind: ReportKind::Schema,
            p_violation: 1.0,
            action_taken: ActionKind::LogWarning,
            detail: serde_json::json!({}),
            batch_id: 3,
            timestamp: utc_timestamp(),
            propagated: false,
        }
    }

    struct Broken;

    impl ViolationSink for Broken {
        fn record(&self, _r: &ViolationReport) -> Result<(), SinkFailure> {
            Err(SinkFailure("disk full".into()))
        }
    }

    #[test]
    fn each_action_logs_once() {
        for (action, disposition, propagated) in [
            (ActionKind::LogWarning, Disposition::Continue, false),
            (ActionKind::Exception, Disposition::Reject, false),
            (ActionKind::PropagateUncertainty, Disposition::Continue, true),
        ] {
            let sink = MemorySink::new();
            let out = apply_action(action, report(), &sink);
            assert_eq!(out.disposition, disposition);
            let records = sink.records();
            assert_eq!(records.len(), 1);
            assert_eq!(records[0].action_taken, action);
            assert_eq!(records[0].propagated, propagated);
            assert!(out.sink_error.is_none());
        }
    }

    #[test]
    fn sink_failure_keeps_disposition() {
        let out = apply_action(ActionKind::Exception, report(), &Broken);
        assert_eq!(out.disposition, Disposition::Reject);
        assert!(out.sink_error.is_some());
    }

    #[test]
    fn timestamp_shape() {
        let t = utc_timestamp();
        // 2026-01-02T03:04:05.678Z
        assert_eq!(t.len(), 24, "{t}");
        assert!(t.ends_with('Z'));
        assert_eq!(&t[19..20], ".");
    }

    #[test]
    fn jsonl_sink_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let sink = JsonlSink::open(&path).unwrap();
        sink.record(&report()).unwrap();
        sink.record(&report()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "action_taken",
                "batch_id",
                "condition_name",
                "detail",
                "kind",
                "p_violation",
                "propagated",
                "timestamp"
            ]
        );
    }
}
