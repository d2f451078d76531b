use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::calibration::{calibrate_threshold, CalibrationTable};
use super::density::{perturb_background, GaussianDensity};
use super::mahalanobis::MahalanobisModel;
use super::model::{orientation_of, DetectorModel, DetectorParams, TrainingMeta};
use super::DetectorError;
use crate::contract::{DetectorMethod, ValidationModelSpec};
use crate::data::{DataError, NumericMatrix, RecordBatch};

/// Fewest training rows accepted.
pub const MIN_TRAIN_ROWS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Fraction of rows scored out-of-fold per fold; the number of folds is
    /// `round(1 / heldout_fraction)`.
    pub heldout_fraction: f64,
    pub seed: u64,
    /// Confidence at which `threshold_score` is computed.
    pub confidence: f64,
    /// Cell corruption rate for the likelihood-ratio background.
    pub background_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            heldout_fraction: 0.25,
            seed: 0,
            confidence: 0.95,
            background_rate: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig {
            seed,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::InvalidConfig(m.into()));
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction <= 0.5) {
            return bad("heldout_fraction must lie in (0, 0.5]");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        if !(self.background_rate > 0.0 && self.background_rate < 1.0) {
            return bad("background_rate must lie in (0, 1)");
        }
        Ok(())
    }

    fn folds(&self) -> usize {
        ((1.0 / self.heldout_fraction).round() as usize).max(2)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    /// Non-fatal findings such as constant features.
    pub warnings: Vec<String>,
}

/// Seed for the background perturbation.
fn background_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

/// Fit `method` on the rows `rows` of `data` (all rows when `None`).
/// `background` is the perturbed copy of `data` used by the likelihood-ratio
/// method; a fold's background is the same subset of that one perturbation,
/// so fold models and the final model differ only in their rows.
fn fit_params(
    method: DetectorMethod,
    data: &NumericMatrix,
    background: Option<&NumericMatrix>,
    rows: Option<&[usize]>,
    cfg: &TrainConfig,
) -> DetectorParams {
    let subset = |m: &NumericMatrix| match rows {
        Some(r) => m.select_rows(r),
        None => m.clone(),
    };
    let data = subset(data);
    match method {
        DetectorMethod::LikelihoodRatio => {
            let background = background.expect("likelihood-ratio fits need a background");
            DetectorParams::LikelihoodRatio {
                foreground: GaussianDensity::fit(&data),
                background: GaussianDensity::fit(&subset(background)),
                background_rate: cfg.background_rate,
            }
        }
        DetectorMethod::Mahalanobis => DetectorParams::Mahalanobis(MahalanobisModel::fit(&data)),
        DetectorMethod::KolmogorovSmirnov => {
            let reference = (0..data.n_features())
                .map(|j| {
                    let mut col: Vec<f64> = data.column(j).collect();
                    col.sort_by(f64::total_cmp);
                    col
                })
                .collect();
            DetectorParams::KsBatch { reference }
        }
    }
}

/// Train the validation model named by `spec` on `train`.
///
/// Rows are shuffled by `cfg.seed` and split into folds. Each fold is scored
/// by a model fitted on the other folds, so every training row contributes
/// one out-of-fold score to the calibration table. The returned parameters
/// are fitted on all rows.
pub fn train_detector(
    spec: &ValidationModelSpec,
    train: &NumericMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, DetectorError> {
    cfg.check()?;
    let n = train.n_rows();
    if n < MIN_TRAIN_ROWS {
        return Err(DetectorError::TooFewRows {
            needed: MIN_TRAIN_ROWS,
            found: n,
        });
    }
    if train.n_features() == 0 {
        return Err(DetectorError::InvalidConfig("training data has no features".into()));
    }
    for (j, name) in train.features.iter().enumerate() {
        if train.column(j).any(|x| !x.is_finite()) {
            return Err(DetectorError::NonNumericFeature(name.clone()));
        }
    }

    let mut warnings = Vec::new();
    let (_, var) = train.column_moments();
    for (name, v) in train.features.iter().zip(&var) {
        if *v == 0.0 {
            warnings.push(format!(
                "feature `{name}` is constant; its variance is floored"
            ));
        }
    }

    let method = spec.effective_method();
    let background = (method == DetectorMethod::LikelihoodRatio)
        .then(|| perturb_background(train, cfg.background_rate, background_seed(cfg.seed)));
    let params = fit_params(method, train, background.as_ref(), None, cfg);

    let (calibration, threshold_score) = match orientation_of(method) {
        None => (None, None),
        Some(orientation) => {
            let k = cfg.folds();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            let mut scores = Vec::with_capacity(n);
            for fold in 0..k {
                let (lo, hi) = (fold * n / k, (fold + 1) * n / k);
                let held: Vec<usize> = order[lo..hi].to_vec();
                let fit: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
                let fold_model = DetectorModel {
                    method,
                    features: train.features.clone(),
                    params: fit_params(method, train, background.as_ref(), Some(&fit), cfg),
                    calibration: None,
                    threshold_score: None,
                    meta: TrainingMeta {
                        n_train: fit.len(),
                        seed: cfg.seed,
                        confidence: cfg.confidence,
                    },
                };
                scores.extend(fold_model.score_rows(&train.select_rows(&held))?);
            }
            let table = CalibrationTable::new(scores, orientation);
            let threshold = calibrate_threshold(&table, cfg.confidence);
            (Some(table), Some(threshold))
        }
    };

    Ok(TrainOutcome {
        model: DetectorModel {
            method,
            features: train.features.clone(),
            params,
            calibration,
            threshold_score,
            meta: TrainingMeta {
                n_train: n,
                seed: cfg.seed,
                confidence: cfg.confidence,
            },
        },
        warnings,
    })
}

/// [`train_detector`] on every column of a record batch.
pub fn train_detector_from_batch(
    spec: &ValidationModelSpec,
    train: &RecordBatch,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, DetectorError> {
    let numeric = train.to_numeric().map_err(|e| match e {
        DataError::NonNumeric { column, .. } => DetectorError::NonNumericFeature(column),
        other => DetectorError::InvalidConfig(other.to_string()),
    })?;
    train_detector(spec, &numeric, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackLabel {
    TrueViolation,
    FalseAlarm,
}

impl std::str::FromStr for FeedbackLabel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "true_violation" => Ok(FeedbackLabel::TrueViolation),
            "false_alarm" => Ok(FeedbackLabel::FalseAlarm),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    /// Precomputed row scores.
    Scores(Vec<f64>),
    Batch(NumericMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackItem {
    pub evidence: Evidence,
    pub label: FeedbackLabel,
}

/// Fold operator feedback into a copy of `model`.
///
/// False alarms are in-distribution data: their row scores join the
/// calibration table and the threshold is recomputed. For KS models the
/// batch joins the reference sample. True violations carry no
/// in-distribution information and are ignored.
pub fn recalibrate_with_feedback(
    model: &DetectorModel,
    feedback: &[FeedbackItem],
) -> Result<DetectorModel, DetectorError> {
    if feedback.is_empty() {
        return Err(DetectorError::InvalidConfig("no feedback items".into()));
    }
    let mut out = model.clone();
    for item in feedback {
        if item.label == FeedbackLabel::TrueViolation {
            continue;
        }
        if let Evidence::Batch(batch) = &item.evidence {
            if batch.features != model.features {
                return Err(DetectorError::FeatureNameMismatch {
                    expected: model.features.clone(),
                    found: batch.features.clone(),
                });
            }
        }
        match (&mut out.params, &mut out.calibration, &item.evidence) {
            (DetectorParams::KsBatch { reference }, _, Evidence::Batch(batch)) => {
                for (j, col) in reference.iter_mut().enumerate() {
                    col.extend(batch.column(j));
                    col.sort_by(f64::total_cmp);
                }
            }
            (DetectorParams::KsBatch { .. }, _, Evidence::Scores(_)) => {
                return Err(DetectorError::InvalidConfig(
                    "KS feedback needs raw batches, not scores".into(),
                ));
            }
            (_, Some(table), evidence) => {
                let extra = match evidence {
                    Evidence::Scores(s) => s.clone(),
                    Evidence::Batch(b) => model.score_rows(b)?,
                };
                if extra.iter().any(|s| !s.is_finite()) {
                    return Err(DetectorError::InvalidConfig("non-finite feedback score".into()));
                }
                let mut scores = std::mem::take(&mut table.scores);
                scores.extend(extra);
                *table = CalibrationTable::new(scores, table.orientation);
            }
            (_, None, _) => unreachable!("per-row detectors carry a calibration table"),
        }
    }
    if let Some(table) = &out.calibration {
        out.threshold_score = Some(calibrate_threshold(table, out.meta.confidence));
    }
    Ok(out)
}
