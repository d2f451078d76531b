use serde::{Deserialize, Serialize};
use serde_json::json;

use super::calibration::{calibrate_threshold, CalibrationTable, Orientation};
use super::density::GaussianDensity;
use super::ks::KS_MIN_SAMPLES;
use super::mahalanobis::MahalanobisModel;
use super::DetectorError;
use crate::contract::DetectorMethod;
use crate::data::NumericMatrix;

/// Method-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorParams {
    LikelihoodRatio {
        foreground: GaussianDensity,
        background: GaussianDensity,
        background_rate: f64,
    },
    Mahalanobis(MahalanobisModel),
    KsBatch {
        /// One sorted training sample per feature.
        reference: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_train: usize,
    pub seed: u64,
    /// Confidence the threshold score was calibrated at.
    pub confidence: f64,
}

/// A trained validation model.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub method: DetectorMethod,
    pub features: Vec<String>,
    pub params: DetectorParams,
    /// Absent for the KS method, which compares samples directly.
    pub calibration: Option<CalibrationTable>,
    /// Row-level trigger score at `meta.confidence`; absent for KS.
    pub threshold_score: Option<f64>,
    pub meta: TrainingMeta,
}

pub(crate) fn orientation_of(method: DetectorMethod) -> Option<Orientation> {
    match method {
        DetectorMethod::LikelihoodRatio => Some(Orientation::LowIsOod),
        DetectorMethod::Mahalanobis => Some(Orientation::HighIsOod),
        DetectorMethod::KolmogorovSmirnov => None,
    }
}

impl DetectorModel {
    /// Per-row scores for the per-row methods. Panics on a KS model.
    pub fn score_rows(&self, input: &NumericMatrix) -> Result<Vec<f64>, DetectorError> {
        match &self.params {
            DetectorParams::LikelihoodRatio {
                foreground,
                background,
                ..
            } => input
                .rows
                .iter()
                .map(|x| Ok(foreground.logpdf(x)? - background.logpdf(x)?))
                .collect(),
            DetectorParams::Mahalanobis(m) => {
                let scorer = m.scorer()?;
                input.rows.iter().map(|x| scorer.score(x)).collect()
            }
            DetectorParams::KsBatch { .. } => {
                unreachable!("KS detectors have no per-row score")
            }
        }
    }

    /// Training mean of each feature, as captured by the model.
    pub fn feature_mean(&self) -> Vec<f64> {
        match &self.params {
            DetectorParams::LikelihoodRatio { foreground, .. } => foreground.mean.clone(),
            DetectorParams::Mahalanobis(m) => m.mean.clone(),
            DetectorParams::KsBatch { reference } => reference
                .iter()
                .map(|col| col.iter().sum::<f64>() / col.len() as f64)
                .collect(),
        }
    }

    /// Training standard deviation of each feature, as captured by the model.
    pub fn feature_std(&self) -> Vec<f64> {
        match &self.params {
            DetectorParams::LikelihoodRatio { foreground, .. } => {
                foreground.variance.iter().map(|v| v.sqrt()).collect()
            }
            DetectorParams::Mahalanobis(m) => {
                (0..m.dim()).map(|i| m.covariance[i][i].sqrt()).collect()
            }
            DetectorParams::KsBatch { reference } => reference
                .iter()
                .map(|col| {
                    let n = col.len() as f64;
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    var.sqrt()
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let params = match &self.params {
            DetectorParams::LikelihoodRatio {
                foreground,
                background,
                background_rate,
            } => json!({
                "foreground": foreground,
                "background": background,
                "background_rate": background_rate,
            }),
            DetectorParams::Mahalanobis(m) => json!({
                "mean": m.mean,
                "covariance": m.covariance,
                "shrinkage": m.shrinkage,
            }),
            DetectorParams::KsBatch { reference } => json!({ "reference": reference }),
        };
        let doc = Document {
            method: self.method.as_str().to_string(),
            features: self.features.clone(),
            params,
            calibration: self.calibration.clone(),
            threshold_score: self.threshold_score,
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("detector JSON");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, DetectorError> {
        let bad = |m: String| DetectorError::MalformedModelDocument(m);
        let doc: Document = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let method: DetectorMethod = doc
            .method
            .parse()
            .map_err(|()| bad(format!("unknown method `{}`", doc.method)))?;
        let params = match method {
            DetectorMethod::LikelihoodRatio => {
                let p: LlrParams =
                    serde_json::from_value(doc.params).map_err(|e| bad(e.to_string()))?;
                DetectorParams::LikelihoodRatio {
                    foreground: p.foreground,
                    background: p.background,
                    background_rate: p.background_rate,
                }
            }
            DetectorMethod::Mahalanobis => {
                let p: MahalanobisParams =
                    serde_json::from_value(doc.params).map_err(|e| bad(e.to_string()))?;
                DetectorParams::Mahalanobis(MahalanobisModel {
                    mean: p.mean,
                    covariance: p.covariance,
                    shrinkage: p.shrinkage,
                })
            }
            DetectorMethod::KolmogorovSmirnov => {
                let p: KsParams =
                    serde_json::from_value(doc.params).map_err(|e| bad(e.to_string()))?;
                DetectorParams::KsBatch {
                    reference: p.reference,
                }
            }
        };
        let model = DetectorModel {
            method,
            features: doc.features,
            params,
            calibration: doc.calibration,
            threshold_score: doc.threshold_score,
            meta: doc.meta,
        };
        model.check().map_err(bad)?;
        Ok(model)
    }

    /// Verifies every structural invariant of a model.
    pub fn check(&self) -> Result<(), String> {
        let d = self.features.len();
        if d == 0 {
            return Err("model has no features".into());
        }
        if !(self.meta.confidence > 0.0 && self.meta.confidence < 1.0) {
            return Err(format!("confidence {} outside (0, 1)", self.meta.confidence));
        }
        let dims = |what: &str, len: usize| {
            if len == d {
                Ok(())
            } else {
                Err(format!("{what} has {len} entries for {d} features"))
            }
        };
        let positive = |what: &str, v: &[f64]| {
            if v.iter().all(|x| x.is_finite() && *x > 0.0) {
                Ok(())
            } else {
                Err(format!("{what} must be finite and strictly positive"))
            }
        };
        let finite = |what: &str, v: &[f64]| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(format!("{what} must be finite"))
            }
        };
        match &self.params {
            DetectorParams::LikelihoodRatio {
                foreground,
                background,
                background_rate,
            } => {
                for (name, g) in [("foreground", foreground), ("background", background)] {
                    dims(&format!("{name}.mean"), g.mean.len())?;
                    dims(&format!("{name}.variance"), g.variance.len())?;
                    finite(&format!("{name}.mean"), &g.mean)?;
                    positive(&format!("{name}.variance"), &g.variance)?;
                }
                if !(*background_rate > 0.0 && *background_rate < 1.0) {
                    return Err("background_rate outside (0, 1)".into());
                }
            }
            DetectorParams::Mahalanobis(m) => {
                dims("mean", m.mean.len())?;
                finite("mean", &m.mean)?;
                dims("covariance", m.covariance.len())?;
                for (i, row) in m.covariance.iter().enumerate() {
                    dims("covariance row", row.len())?;
                    finite("covariance", row)?;
                    #[allow(clippy::neg_cmp_op_on_partial_ord)]
                    if !(row[i] > 0.0) {
                        return Err("covariance diagonal must be strictly positive".into());
                    }
                    for (j, &x) in row.iter().enumerate() {
                        if x != m.covariance[j][i] {
                            return Err("covariance is not symmetric".into());
                        }
                    }
                }
                if !(0.0..=1.0).contains(&m.shrinkage) {
                    return Err("shrinkage outside [0, 1]".into());
                }
            }
            DetectorParams::KsBatch { reference } => {
                dims("reference", reference.len())?;
                for col in reference {
                    if col.len() < KS_MIN_SAMPLES {
                        return Err("reference sample too small".into());
                    }
                    finite("reference", col)?;
                    if !col.windows(2).all(|w| w[0] <= w[1]) {
                        return Err("reference sample is not sorted".into());
                    }
                }
            }
        }

        match (orientation_of(self.method), &self.calibration, self.threshold_score) {
            (None, None, None) => Ok(()),
            (Some(orientation), Some(table), Some(threshold)) => {
                if table.orientation != orientation {
                    return Err("calibration orientation does not match the method".into());
                }
                table.check()?;
                let expected = calibrate_threshold(table, self.meta.confidence);
                if expected.to_bits() != threshold.to_bits() {
                    return Err(format!(
                        "threshold_score {threshold} disagrees with the calibration table ({expected})"
                    ));
                }
                Ok(())
            }
            (None, ..) => Err("KS models carry no calibration or threshold".into()),
            (Some(_), ..) => Err("missing calibration table or threshold_score".into()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    method: String,
    features: Vec<String>,
    params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<CalibrationTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold_score: Option<f64>,
    meta: TrainingMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LlrParams {
    foreground: GaussianDensity,
    background: GaussianDensity,
    background_rate: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MahalanobisParams {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    shrinkage: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KsParams {
    reference: Vec<Vec<f64>>,
}
