//! Runtime enforcement of a loaded guard bundle around a model.
//!
//! For every batch the guard evaluates the preconditions in contract order,
//! calls the model unless an `exception` precondition fired, then evaluates
//! the postconditions on the predictions. Every violation is logged to the
//! sink exactly once and routed by its action.

mod action;
mod adapter;

pub use action::{
    apply_action, utc_timestamp, ActionOutcome, Disposition, JsonlSink, MemorySink, NullSink,
    ReportKind, SinkFailure, ViolationReport, ViolationSink,
};
pub use adapter::{
    builtin_predict, check_probabilities_sum_to_one, http_predict, AdapterConfig, AdapterError,
    BuiltinLinear, ExternalHttp, HttpClient, Predictor, SumVerdict, Unsupported,
    DEFAULT_RETRIES, DEFAULT_TIMEOUT_MS,
};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bundle::GuardBundle;
use crate::contract::{ActionKind, ConditionKind, DEFAULT_SUM_TOLERANCE};
use crate::data::{DataError, RecordBatch, Value};
use crate::detectors;
use crate::schema::check_schema;

#[derive(Debug, thiserror::Error)]
pub enum GuardError {
    #[error("model call failed: {0}")]
    AdapterFailure(#[from] AdapterError),
    #[error("bundle invariant broken: {0}")]
    BundleInvariantBroken(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub violations: Vec<ViolationReport>,
}

/// Result of one guarded prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardedOutput {
    pub batch_id: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<Vec<f64>>>,
    pub warnings: Vec<ViolationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<Uncertainty>,
    /// Reports of violations whose action was `exception`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<ViolationReport>,
    /// Secondary problems such as violation-log write failures.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// A bundle, its model adapter and a violation sink.
pub struct Guard {
    bundle: GuardBundle,
    predictor: Box<dyn Predictor>,
    sink: Arc<dyn ViolationSink>,
    next_batch: AtomicU64,
}

impl Guard {
    /// Guard using the bundle's own adapter configuration.
    pub fn new(bundle: GuardBundle, sink: Arc<dyn ViolationSink>) -> Result<Self, GuardError> {
        let predictor = bundle.adapter.predictor()?;
        Self::with_predictor(bundle, predictor, sink)
    }

    pub fn with_predictor(
        bundle: GuardBundle,
        predictor: Box<dyn Predictor>,
        sink: Arc<dyn ViolationSink>,
    ) -> Result<Self, GuardError> {
        bundle.check().map_err(GuardError::BundleInvariantBroken)?;
        Ok(Guard {
            bundle,
            predictor,
            sink,
            next_batch: AtomicU64::new(0),
        })
    }

    pub fn bundle(&self) -> &GuardBundle {
        &self.bundle
    }

    /// Guard one batch, numbering batches from 0 in call order.
    pub fn predict(&self, batch: &RecordBatch) -> Result<GuardedOutput, GuardError> {
        let id = self.next_batch.fetch_add(1, Ordering::Relaxed);
        self.predict_with_id(batch, id)
    }

    pub fn predict_with_id(
        &self,
        batch: &RecordBatch,
        batch_id: u64,
    ) -> Result<GuardedOutput, GuardError> {
        let mut out = GuardedOutput {
            batch_id,
            status: Status::Ok,
            predictions: None,
            warnings: Vec::new(),
            uncertainty: None,
            rejections: Vec::new(),
            diagnostics: Vec::new(),
        };
        for condition in &self.bundle.contract.preconditions {
            if let Some(report) = self.check_input(condition.name(), &condition.kind, batch, batch_id)? {
                self.dispatch(condition.action(), report, &mut out);
            }
        }
        if out.status == Status::Rejected {
            return Ok(out);
        }

        let x = batch.to_numeric().map_err(|e| match e {
            DataError::NonNumeric { column, .. } => AdapterError::NonNumericInput(column),
            other => AdapterError::InvalidModel(other.to_string()),
        })?;
        let predictions = self.predictor.predict(&x.rows)?;

        for condition in &self.bundle.contract.postconditions {
            if let Some(report) =
                self.check_output(condition.name(), &condition.kind, &predictions, batch_id)
            {
                self.dispatch(condition.action(), report, &mut out);
            }
        }
        if out.status == Status::Ok {
            out.predictions = Some(predictions);
        }
        Ok(out)
    }

    fn dispatch(&self, action: ActionKind, report: ViolationReport, out: &mut GuardedOutput) {
        let outcome = apply_action(action, report, self.sink.as_ref());
        if let Some(e) = outcome.sink_error {
            out.diagnostics.push(e.to_string());
        }
        match action {
            ActionKind::LogWarning => out.warnings.push(outcome.report),
            ActionKind::PropagateUncertainty => out
                .uncertainty
                .get_or_insert_with(|| Uncertainty {
                    violations: Vec::new(),
                })
                .violations
                .push(outcome.report),
            ActionKind::Exception => out.rejections.push(outcome.report),
        }
        if outcome.disposition == Disposition::Reject {
            out.status = Status::Rejected;
        }
    }

    fn check_input(
        &self,
        name: &str,
        kind: &ConditionKind,
        batch: &RecordBatch,
        batch_id: u64,
    ) -> Result<Option<ViolationReport>, GuardError> {
        let draft = |kind: ReportKind, p: f64, detail: serde_json::Value| ViolationReport {
            condition_name: name.to_string(),
            kind,
            p_violation: p,
            action_taken: ActionKind::LogWarning,
            detail,
            batch_id,
            timestamp: utc_timestamp(),
            propagated: false,
        };
        Ok(match kind {
            ConditionKind::SchemaMatches { schema, .. } => {
                let def = self.bundle.schemas.get(schema).ok_or_else(|| {
                    GuardError::BundleInvariantBroken(format!("schema `{schema}` missing"))
                })?;
                let verdict = check_schema(batch, def);
                (!verdict.ok).then(|| {
                    draft(
                        ReportKind::Schema,
                        1.0,
                        json!({
                            "schema": schema,
                            "violation_count": verdict.violations.len(),
                            "violations": verdict.violations,
                        }),
                    )
                })
            }
            ConditionKind::DistributionMatches { trigger, .. } => {
                let model = self.bundle.detectors.get(name).ok_or_else(|| {
                    GuardError::BundleInvariantBroken(format!("detector for `{name}` missing"))
                })?;
                let threshold = trigger.confidence_threshold;
                let verdict = batch
                    .project(&model.features)
                    .map_err(|e| e.to_string())
                    .and_then(|m| {
                        detectors::evaluate(model, &m, threshold).map_err(|e| e.to_string())
                    });
                match verdict {
                    Ok(v) if v.violated => Some(draft(
                        ReportKind::Distribution,
                        v.p_violation,
                        json!({
                            "method": v.method,
                            "score": v.score,
                            "confidence_threshold": threshold,
                            "per_feature_detail": v.per_feature_detail,
                        }),
                    )),
                    Ok(_) => None,
                    // Data the detector cannot even score is treated as a
                    // certain violation.
                    Err(error) => Some(draft(
                        ReportKind::Distribution,
                        1.0,
                        json!({
                            "method": model.method,
                            "confidence_threshold": threshold,
                            "error": error,
                        }),
                    )),
                }
            }
            ConditionKind::RangeCheck { field, min, max, .. } => {
                let idx = batch.column_index(field);
                let bad_rows: Vec<usize> = match idx {
                    None => Vec::new(),
                    Some(j) => batch
                        .rows()
                        .iter()
                        .enumerate()
                        .filter(|(_, row)| !in_range(&row[j], *min, *max))
                        .map(|(i, _)| i)
                        .collect(),
                };
                if idx.is_none() {
                    Some(draft(
                        ReportKind::Range,
                        1.0,
                        json!({"field": field, "min": min, "max": max, "error": "missing column"}),
                    ))
                } else {
                    range_report(&bad_rows, field, *min, *max).map(|d| draft(ReportKind::Range, 1.0, d))
                }
            }
            ConditionKind::ProbabilitiesSumToOne { .. } => {
                return Err(GuardError::BundleInvariantBroken(format!(
                    "`{name}` is not an input condition"
                )))
            }
        })
    }

    fn check_output(
        &self,
        name: &str,
        kind: &ConditionKind,
        pred: &[Vec<f64>],
        batch_id: u64,
    ) -> Option<ViolationReport> {
        let draft = |kind: ReportKind, detail: serde_json::Value| ViolationReport {
            condition_name: name.to_string(),
            kind,
            p_violation: 1.0,
            action_taken: ActionKind::LogWarning,
            detail,
            batch_id,
            timestamp: utc_timestamp(),
            propagated: false,
        };
        match kind {
            ConditionKind::ProbabilitiesSumToOne { tolerance, .. } => {
                let tolerance = tolerance.unwrap_or(DEFAULT_SUM_TOLERANCE);
                let v = check_probabilities_sum_to_one(pred, tolerance);
                (!v.ok).then(|| {
                    draft(
                        ReportKind::Postcondition,
                        json!({
                            "tolerance": tolerance,
                            "worst_row": v.worst_row,
                            "worst_deviation": v.worst_deviation,
                        }),
                    )
                })
            }
            ConditionKind::RangeCheck { field, min, max, .. } => {
                let j = match self.output_column(field) {
                    Some(j) => j,
                    None => {
                        return Some(draft(
                            ReportKind::Range,
                            json!({"field": field, "min": min, "max": max, "error": "unknown output column"}),
                        ))
                    }
                };
                let bad_rows: Vec<usize> = pred
                    .iter()
                    .enumerate()
                    .filter(|(_, row)| !row.get(j).is_some_and(|&p| in_bounds(p, *min, *max)))
                    .map(|(i, _)| i)
                    .collect();
                range_report(&bad_rows, field, *min, *max).map(|d| draft(ReportKind::Range, d))
            }
            // Rejected by validation before a bundle is ever built.
            ConditionKind::DistributionMatches { .. } | ConditionKind::SchemaMatches { .. } => None,
        }
    }

    /// Output columns are the model's class names, or `class_<j>` when the
    /// adapter does not know them.
    fn output_column(&self, field: &str) -> Option<usize> {
        match self.predictor.classes() {
            Some(classes) => classes.iter().position(|c| c == field),
            None => field.strip_prefix("class_").and_then(|j| j.parse().ok()),
        }
    }
}

/// Guard one batch.
pub fn guard_predict(guard: &Guard, batch: &RecordBatch) -> Result<GuardedOutput, GuardError> {
    guard.predict(batch)
}

fn in_bounds(x: f64, min: Option<f64>, max: Option<f64>) -> bool {
    !x.is_nan() && min.is_none_or(|m| x >= m) && max.is_none_or(|m| x <= m)
}

fn in_range(v: &Value, min: Option<f64>, max: Option<f64>) -> bool {
    v.as_f64().is_some_and(|x| in_bounds(x, min, max))
}

fn range_report(
    bad_rows: &[usize],
    field: &str,
    min: Option<f64>,
    max: Option<f64>,
) -> Option<serde_json::Value> {
    (!bad_rows.is_empty()).then(|| {
        json!({
            "field": field,
            "min": min,
            "max": max,
            "violating_rows": bad_rows.len(),
            "first_row": bad_rows[0],
        })
    })
}
