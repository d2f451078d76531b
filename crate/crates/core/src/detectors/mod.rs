//! Validation models for `Distribution_Matches` conditions.
//!
//! Three methods are available:
//!
//! * likelihood ratio: a diagonal Gaussian foreground density fitted to the
//!   training data and a background density fitted to a noise-corrupted copy
//!   of it; a row scores `log p_fg(x) − log p_bg(x)` and low scores are OOD.
//! * Mahalanobis distance under a shrinkage-regularized covariance; high
//!   scores are OOD.
//! * per-feature two-sample Kolmogorov–Smirnov tests against the training
//!   sample, Bonferroni-corrected across features.
//!
//! The per-row methods score each row of a batch, take the median, and map it
//! to a violation probability through a calibration table of out-of-fold
//! training scores.

mod calibration;
mod density;
mod ks;
mod mahalanobis;
mod model;
mod train;

pub use calibration::{
    calibrate_threshold, order_statistic_index, CalibrationTable, Orientation,
    MIN_CALIBRATION_SCORES,
};
pub use density::{perturb_background, GaussianDensity, VARIANCE_FLOOR};
pub use ks::{kolmogorov_survival, ks_two_sample, KsResult, KS_MIN_SAMPLES};
pub use mahalanobis::{MahalanobisModel, SHRINKAGE_FLOOR};
pub use model::{DetectorModel, DetectorParams, TrainingMeta};
pub use train::{
    recalibrate_with_feedback, train_detector, train_detector_from_batch, Evidence, FeedbackItem,
    FeedbackLabel, TrainConfig, TrainOutcome, MIN_TRAIN_ROWS,
};

use serde::{Deserialize, Serialize};

use crate::contract::DetectorMethod;
use crate::data::NumericMatrix;

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("need at least {needed} training rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("feature `{0}` is not numeric")]
    NonNumericFeature(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature mismatch: model expects {expected:?}, input has {found:?}")]
    FeatureNameMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("need at least {needed} samples per side, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("covariance matrix is not positive definite")]
    SingularCovariance,
    #[error("cannot evaluate an empty batch")]
    EmptyBatch,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed detector document: {0}")]
    MalformedModelDocument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDetail {
    pub feature: String,
    pub statistic: f64,
    pub p_value: f64,
}

/// Result of evaluating one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub violated: bool,
    pub p_violation: f64,
    pub score: f64,
    pub method: DetectorMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_feature_detail: Option<Vec<FeatureDetail>>,
}

impl Serialize for DetectorMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DetectorMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|()| serde::de::Error::custom(format!("unknown detector method `{s}`")))
    }
}

/// Median of a non-empty slice (mean of the two middle values when even).
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Score `input` with `model` and decide whether the batch violates the
/// condition at `confidence_threshold`.
pub fn evaluate(
    model: &DetectorModel,
    input: &NumericMatrix,
    confidence_threshold: f64,
) -> Result<Verdict, DetectorError> {
    if input.features != model.features {
        return Err(DetectorError::FeatureNameMismatch {
            expected: model.features.clone(),
            found: input.features.clone(),
        });
    }
    if input.n_rows() == 0 {
        return Err(DetectorError::EmptyBatch);
    }

    let (p_violation, score, detail) = match &model.params {
        DetectorParams::KsBatch { reference } => {
            let d = reference.len();
            let mut detail = Vec::with_capacity(d);
            for (j, (name, reference)) in model.features.iter().zip(reference).enumerate() {
                let mut col: Vec<f64> = input.column(j).collect();
                col.sort_by(f64::total_cmp);
                let r = ks_two_sample(reference, &col)?;
                detail.push(FeatureDetail {
                    feature: name.clone(),
                    statistic: r.statistic,
                    p_value: r.p_value,
                });
            }
            let min_p = detail.iter().map(|f| f.p_value).fold(1.0, f64::min);
            let max_d = detail.iter().map(|f| f.statistic).fold(0.0, f64::max);
            let p = 1.0 - (d as f64 * min_p).min(1.0);
            (p, max_d, Some(detail))
        }
        _ => {
            let table = model
                .calibration
                .as_ref()
                .expect("per-row detectors carry a calibration table");
            let mut scores = model.score_rows(input)?;
            let batch_score = median(&mut scores);
            let p = table.violation_probability(batch_score, input.n_rows());
            (p, batch_score, None)
        }
    };

    Ok(Verdict {
        violated: p_violation >= confidence_threshold,
        p_violation,
        score,
        method: model.method,
        per_feature_detail: detail,
    })
}
