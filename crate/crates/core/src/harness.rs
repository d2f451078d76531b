//! Synthetic data, injected distribution shifts and replay of a data stream
//! through a guard.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::GuardBundle;
use crate::data::{feature_names, RecordBatch, Value};
use crate::guard::{Guard, GuardError, ReportKind, Status};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid shift: {0}")]
    InvalidShift(String),
    #[error("invalid replay setup: {0}")]
    InvalidReplay(String),
    #[error("batch {batch}: {source}")]
    Guard {
        batch: usize,
        #[source]
        source: GuardError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    StandardNormal,
    /// Equal-weight Gaussian components at −1 and +1 per feature.
    Mixture,
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard_normal" => Ok(Distribution::StandardNormal),
            "mixture" => Ok(Distribution::Mixture),
            _ => Err(format!("unknown distribution `{s}` (standard_normal or mixture)")),
        }
    }
}

/// `n_rows × n_features` real values in columns `f_00`, `f_01`, ...
pub fn synth_dataset(n_rows: usize, n_features: usize, dist: Distribution, seed: u64) -> RecordBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_rows)
        .map(|_| {
            (0..n_features)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let x = match dist {
                        Distribution::StandardNormal => z,
                        Distribution::Mixture => {
                            if rng.random::<bool>() {
                                z + 1.0
                            } else {
                                z - 1.0
                            }
                        }
                    };
                    Value::Real(x)
                })
                .collect()
        })
        .collect();
    RecordBatch::new(feature_names(n_features), rows).expect("rectangular by construction")
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShiftSpec {
    NoShift,
    MeanShift { sigmas: f64, feature_fraction: f64 },
    Scale { factor: f64, feature_fraction: f64 },
    DropColumn { column: String },
    CorruptDtype { column: String, replacement: String },
}

impl ShiftSpec {
    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidShift(m));
        match self {
            ShiftSpec::MeanShift { sigmas, feature_fraction } => {
                if !sigmas.is_finite() {
                    return bad(format!("sigmas {sigmas} is not finite"));
                }
                fraction_ok(*feature_fraction)
            }
            ShiftSpec::Scale { factor, feature_fraction } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    return bad(format!("scale factor {factor} must be positive"));
                }
                fraction_ok(*feature_fraction)
            }
            ShiftSpec::DropColumn { column } | ShiftSpec::CorruptDtype { column, .. } => {
                if column.is_empty() {
                    return bad("empty column name".into());
                }
                Ok(())
            }
            ShiftSpec::NoShift => Ok(()),
        }
    }

    pub fn is_shift(&self) -> bool {
        *self != ShiftSpec::NoShift
    }
}

fn fraction_ok(f: f64) -> Result<(), HarnessError> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(HarnessError::InvalidShift(format!("feature fraction {f} outside (0, 1]")))
    }
}

/// `none`, `mean:<sigmas>[:<fraction>]`, `scale:<factor>[:<fraction>]`,
/// `drop:<column>`, `corrupt:<column>:<literal>`. The fraction defaults to 1.
impl FromStr for ShiftSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::InvalidShift(format!("cannot parse shift `{s}`"));
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.splitn(3, ':').collect();
        let spec = match parts.as_slice() {
            ["none"] => ShiftSpec::NoShift,
            ["mean", sigmas] => ShiftSpec::MeanShift {
                sigmas: num(sigmas)?,
                feature_fraction: 1.0,
            },
            ["mean", sigmas, frac] => ShiftSpec::MeanShift {
                sigmas: num(sigmas)?,
                feature_fraction: num(frac)?,
            },
            ["scale", factor] => ShiftSpec::Scale {
                factor: num(factor)?,
                feature_fraction: 1.0,
            },
            ["scale", factor, frac] => ShiftSpec::Scale {
                factor: num(factor)?,
                feature_fraction: num(frac)?,
            },
            ["drop", column] => ShiftSpec::DropColumn {
                column: column.to_string(),
            },
            ["corrupt", column, literal] => ShiftSpec::CorruptDtype {
                column: column.to_string(),
                replacement: literal.to_string(),
            },
            _ => return Err(bad()),
        };
        spec.check()?;
        Ok(spec)
    }
}

impl fmt::Display for ShiftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftSpec::NoShift => f.write_str("none"),
            ShiftSpec::MeanShift { sigmas, feature_fraction } => {
                write!(f, "mean:{sigmas}:{feature_fraction}")
            }
            ShiftSpec::Scale { factor, feature_fraction } => {
                write!(f, "scale:{factor}:{feature_fraction}")
            }
            ShiftSpec::DropColumn { column } => write!(f, "drop:{column}"),
            ShiftSpec::CorruptDtype { column, replacement } => {
                write!(f, "corrupt:{column}:{replacement}")
            }
        }
    }
}

/// Per-feature mean and standard deviation of the reference distribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceStats {
    pub stats: BTreeMap<String, (f64, f64)>,
}

impl ReferenceStats {
    /// Training moments recorded in the bundle's first detector.
    pub fn from_bundle(bundle: &GuardBundle) -> Option<Self> {
        let model = bundle.detectors.values().next()?;
        let stats = model
            .features
            .iter()
            .cloned()
            .zip(model.feature_mean().into_iter().zip(model.feature_std()))
            .collect();
        Some(ReferenceStats { stats })
    }

    /// Sample moments of every all-numeric column.
    pub fn from_batch(batch: &RecordBatch) -> Self {
        let mut stats = BTreeMap::new();
        for name in batch.columns() {
            let values: Option<Vec<f64>> = batch.column(name).unwrap().map(Value::as_f64).collect();
            let Some(values) = values else { continue };
            if values.len() < 2 {
                continue;
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            stats.insert(name.clone(), (mean, var.sqrt()));
        }
        ReferenceStats { stats }
    }
}

/// Columns a mean or scale shift applies to: a seeded random subset of size
/// `ceil(fraction·d)` of the batch columns that have reference statistics.
fn shifted_columns(batch: &RecordBatch, reference: &ReferenceStats, fraction: f64, seed: u64) -> Vec<usize> {
    let mut candidates: Vec<usize> = batch
        .columns()
        .iter()
        .enumerate()
        .filter(|(_, c)| reference.stats.contains_key(*c))
        .map(|(i, _)| i)
        .collect();
    let k = ((fraction * candidates.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    candidates.truncate(k.min(candidates.len()));
    candidates.sort_unstable();
    candidates
}

/// Apply `shift` to `batch`. Mean and scale shifts are measured in reference
/// standard deviations; the same seed always picks the same columns.
pub fn inject_shift(
    batch: &RecordBatch,
    shift: &ShiftSpec,
    seed: u64,
    reference: &ReferenceStats,
) -> Result<RecordBatch, HarnessError> {
    shift.check()?;
    let mut out = batch.clone();
    match shift {
        ShiftSpec::NoShift => {}
        ShiftSpec::MeanShift { sigmas, feature_fraction } => {
            if *sigmas == 0.0 {
                return Ok(out);
            }
            let cols = shifted_columns(batch, reference, *feature_fraction, seed);
            let deltas: Vec<(usize, f64)> = cols
                .into_iter()
                .map(|j| (j, sigmas * reference.stats[&batch.columns()[j]].1))
                .collect();
            for row in out.rows_mut() {
                for &(j, delta) in &deltas {
                    if let Some(x) = row[j].as_f64() {
                        row[j] = Value::Real(x + delta);
                    }
                }
            }
        }
        ShiftSpec::Scale { factor, feature_fraction } => {
            if *factor == 1.0 {
                return Ok(out);
            }
            let cols = shifted_columns(batch, reference, *feature_fraction, seed);
            let centres: Vec<(usize, f64)> = cols
                .into_iter()
                .map(|j| (j, reference.stats[&batch.columns()[j]].0))
                .collect();
            for row in out.rows_mut() {
                for &(j, mean) in &centres {
                    if let Some(x) = row[j].as_f64() {
                        row[j] = Value::Real(mean + factor * (x - mean));
                    }
                }
            }
        }
        ShiftSpec::DropColumn { column } => {
            out.drop_column(column)
                .map_err(|_| HarnessError::UnknownColumn(column.clone()))?;
        }
        ShiftSpec::CorruptDtype { column, replacement } => {
            let j = batch
                .column_index(column)
                .ok_or_else(|| HarnessError::UnknownColumn(column.clone()))?;
            for row in out.rows_mut() {
                row[j] = Value::Str(replacement.clone());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub shift: ShiftSpec,
    /// Index of the first shifted batch.
    pub onset: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub condition_name: String,
    pub violations: usize,
    pub violation_rate: f64,
    /// Counts over batches from the onset on; equal to the totals when no
    /// shift is injected.
    pub post_onset_violations: usize,
    pub post_onset_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub n_batches: usize,
    pub batch_size: usize,
    /// Trailing rows that did not fill a batch.
    pub dropped_rows: usize,
    pub shift: String,
    pub shift_onset_batch: usize,
    pub conditions: Vec<ConditionStats>,
    pub rejected_batches: usize,
    /// Batches from the onset to the first batch with a violation.
    pub detection_latency_batches: Option<usize>,
    /// Share of unshifted batches with at least one violation.
    pub false_alarm_rate: f64,
    /// Share of distribution-condition violations among unshifted batches.
    pub distribution_false_alarm_rate: f64,
    /// Number of violation records written during the replay.
    pub log_records: usize,
    pub wall_time_ms: u64,
}

/// Feed `data` through `guard` in consecutive batches, shifting every batch
/// from `cfg.onset` on.
pub fn replay(guard: &Guard, data: &RecordBatch, cfg: &ReplayConfig) -> Result<ReplayReport, HarnessError> {
    let started = Instant::now();
    cfg.shift.check()?;
    if cfg.batch_size == 0 {
        return Err(HarnessError::InvalidReplay("batch size must be at least 1".into()));
    }
    let n_batches = data.len() / cfg.batch_size;
    if n_batches < 2 {
        return Err(HarnessError::InvalidReplay(format!(
            "{} rows make fewer than 2 batches of {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let shifted = |b: usize| cfg.shift.is_shift() && b >= cfg.onset;
    let reference = ReferenceStats::from_bundle(guard.bundle())
        .unwrap_or_else(|| ReferenceStats::from_batch(data));

    let names: Vec<String> = guard
        .bundle()
        .contract
        .conditions()
        .map(|(_, c)| c.name().to_string())
        .collect();
    let mut totals = vec![0usize; names.len()];
    let mut post = vec![0usize; names.len()];
    let mut rejected = 0;
    let mut latency = None;
    let mut clean_batches = 0;
    let mut clean_alarms = 0;
    let mut clean_distribution_alarms = 0;
    let mut log_records = 0;

    for b in 0..n_batches {
        let mut batch = data.slice(b * cfg.batch_size, (b + 1) * cfg.batch_size);
        if shifted(b) {
            batch = inject_shift(&batch, &cfg.shift, cfg.seed, &reference)?;
        }
        let out = guard
            .predict_with_id(&batch, b as u64)
            .map_err(|source| HarnessError::Guard { batch: b, source })?;
        if out.status == Status::Rejected {
            rejected += 1;
        }
        let reports: Vec<_> = out
            .warnings
            .iter()
            .chain(&out.rejections)
            .chain(out.uncertainty.iter().flat_map(|u| &u.violations))
            .collect();
        log_records += reports.len();
        for r in &reports {
            if let Some(i) = names.iter().position(|n| *n == r.condition_name) {
                totals[i] += 1;
                if b >= cfg.onset || !cfg.shift.is_shift() {
                    post[i] += 1;
                }
            }
        }
        if shifted(b) {
            if latency.is_none() && !reports.is_empty() {
                latency = Some(b - cfg.onset);
            }
        } else {
            clean_batches += 1;
            if !reports.is_empty() {
                clean_alarms += 1;
            }
            if reports.iter().any(|r| r.kind == ReportKind::Distribution) {
                clean_distribution_alarms += 1;
            }
        }
    }

    let post_batches = if cfg.shift.is_shift() {
        n_batches.saturating_sub(cfg.onset)
    } else {
        n_batches
    };
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let conditions = names
        .into_iter()
        .enumerate()
        .map(|(i, condition_name)| ConditionStats {
            condition_name,
            violations: totals[i],
            violation_rate: rate(totals[i], n_batches),
            post_onset_violations: post[i],
            post_onset_rate: rate(post[i], post_batches),
        })
        .collect();

    Ok(ReplayReport {
        n_batches,
        batch_size: cfg.batch_size,
        dropped_rows: data.len() - n_batches * cfg.batch_size,
        shift: cfg.shift.to_string(),
        shift_onset_batch: cfg.onset,
        conditions,
        rejected_batches: rejected,
        detection_latency_batches: latency,
        false_alarm_rate: rate(clean_alarms, clean_batches),
        distribution_false_alarm_rate: rate(clean_distribution_alarms, clean_batches),
        log_records,
        wall_time_ms: started.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(batch: &RecordBatch, col: &str) -> (f64, f64) {
        let v: Vec<f64> = batch.column(col).unwrap().map(|x| x.as_f64().unwrap()).collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_dataset(3, 2, Distribution::StandardNormal, 7);
        let b = synth_dataset(3, 2, Distribution::StandardNormal, 7);
        assert_eq!(a, b);
        assert_eq!(a.columns(), ["f_00", "f_01"]);
        assert_ne!(a, synth_dataset(3, 2, Distribution::StandardNormal, 8));
    }

    #[test]
    fn synth_moments() {
        let normal = synth_dataset(10_000, 3, Distribution::StandardNormal, 1);
        let mix = synth_dataset(10_000, 3, Distribution::Mixture, 1);
        for c in ["f_00", "f_01", "f_02"] {
            let (m, v) = moments(&normal, c);
            assert!(m.abs() < 0.05 && (v - 1.0).abs() < 0.1, "{c}: {m} {v}");
            // Law of total variance: 1 within + 1 between.
            let (m, v) = moments(&mix, c);
            assert!(m.abs() < 0.05 && (v - 2.0).abs() < 0.15, "{c}: {m} {v}");
        }
    }

    #[test]
    fn shift_parsing() {
        assert_eq!("none".parse::<ShiftSpec>().unwrap(), ShiftSpec::NoShift);
        assert_eq!(
            "mean:3.0".parse::<ShiftSpec>().unwrap(),
            ShiftSpec::MeanShift { sigmas: 3.0, feature_fraction: 1.0 }
        );
        assert_eq!(
            "scale:2.0:0.5".parse::<ShiftSpec>().unwrap(),
            ShiftSpec::Scale { factor: 2.0, feature_fraction: 0.5 }
        );
        assert_eq!(
            "drop:ch_01".parse::<ShiftSpec>().unwrap(),
            ShiftSpec::DropColumn { column: "ch_01".into() }
        );
        assert_eq!(
            "corrupt:f_00:n/a:x".parse::<ShiftSpec>().unwrap(),
            ShiftSpec::CorruptDtype { column: "f_00".into(), replacement: "n/a:x".into() }
        );
        for bad in ["", "mean", "mean:x", "mean:1:0", "mean:1:1.5", "scale:-1", "drop:", "wobble:1"] {
            assert!(bad.parse::<ShiftSpec>().is_err(), "{bad}");
        }
        for s in ["none", "mean:3:1", "scale:2:0.5", "drop:a", "corrupt:a:b"] {
            assert_eq!(s.parse::<ShiftSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn identity_shifts() {
        let data = synth_dataset(50, 4, Distribution::StandardNormal, 2);
        let r = ReferenceStats::from_batch(&data);
        assert_eq!(inject_shift(&data, &ShiftSpec::NoShift, 1, &r).unwrap(), data);
        let zero = ShiftSpec::MeanShift { sigmas: 0.0, feature_fraction: 1.0 };
        assert_eq!(inject_shift(&data, &zero, 1, &r).unwrap(), data);
    }

    #[test]
    fn three_sigma_mean_shift() {
        let data = synth_dataset(10_000, 3, Distribution::StandardNormal, 3);
        let mut r = ReferenceStats::default();
        for c in data.columns() {
            r.stats.insert(c.clone(), (0.0, 1.0));
        }
        let shift = ShiftSpec::MeanShift { sigmas: 3.0, feature_fraction: 1.0 };
        let out = inject_shift(&data, &shift, 4, &r).unwrap();
        for c in out.columns() {
            let (m, _) = moments(&out, c);
            assert!((m - 3.0).abs() < 0.1, "{c}: {m}");
        }
    }

    #[test]
    fn partial_shift_picks_ceil_fraction() {
        let data = synth_dataset(20, 8, Distribution::StandardNormal, 3);
        let r = ReferenceStats::from_batch(&data);
        let shift = ShiftSpec::MeanShift { sigmas: 5.0, feature_fraction: 0.3 };
        let a = inject_shift(&data, &shift, 9, &r).unwrap();
        let b = inject_shift(&data.slice(0, 10), &shift, 9, &r).unwrap();
        let changed: Vec<&String> = data
            .columns()
            .iter()
            .filter(|c| a.column(c).unwrap().zip(data.column(c).unwrap()).any(|(x, y)| x != y))
            .collect();
        assert_eq!(changed.len(), 3); // ceil(0.3 · 8)
        // Same seed, same columns.
        for c in data.columns() {
            let moved = b.column(c).unwrap().zip(data.column(c).unwrap()).any(|(x, y)| x != y);
            assert_eq!(moved, changed.contains(&c));
        }
    }

    #[test]
    fn drop_and_corrupt() {
        let data = synth_dataset(5, 2, Distribution::StandardNormal, 3);
        let r = ReferenceStats::from_batch(&data);
        let dropped = inject_shift(&data, &ShiftSpec::DropColumn { column: "f_01".into() }, 0, &r).unwrap();
        assert_eq!(dropped.columns(), ["f_00"]);
        let corrupt = ShiftSpec::CorruptDtype { column: "f_00".into(), replacement: "NaN?".into() };
        let out = inject_shift(&data, &corrupt, 0, &r).unwrap();
        assert!(out.column("f_00").unwrap().all(|v| *v == Value::Str("NaN?".into())));
        assert!(matches!(
            inject_shift(&data, &ShiftSpec::DropColumn { column: "zz".into() }, 0, &r),
            Err(HarnessError::UnknownColumn(_))
        ));
    }
}
