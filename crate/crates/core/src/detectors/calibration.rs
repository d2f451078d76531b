//! Calibration tables and the mapping from detector scores to violation
//! probabilities.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::factorial::ln_binomial;

/// Smallest admissible calibration table.
pub const MIN_CALIBRATION_SCORES: usize = 20;

/// Which end of the score scale indicates out-of-distribution data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowIsOod,
    HighIsOod,
}

/// Sorted in-distribution scores of held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub scores: Vec<f64>,
    pub orientation: Orientation,
}

impl CalibrationTable {
    pub fn new(mut scores: Vec<f64>, orientation: Orientation) -> Self {
        scores.sort_by(f64::total_cmp);
        CalibrationTable {
            scores,
            orientation,
        }
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn check(&self) -> Result<(), String> {
        if self.scores.len() < MIN_CALIBRATION_SCORES {
            return Err(format!(
                "calibration table has {} scores, needs at least {MIN_CALIBRATION_SCORES}",
                self.scores.len()
            ));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err("calibration table holds a non-finite score".into());
        }
        if !self.scores.windows(2).all(|w| w[0] <= w[1]) {
            return Err("calibration scores are not sorted ascending".into());
        }
        Ok(())
    }

    /// Table rank of `score`: `#strictly-below + ½·#equal`.
    pub fn rank(&self, score: f64) -> f64 {
        let below = self.scores.partition_point(|&s| s < score);
        let equal = self.scores[below..].partition_point(|&s| s <= score);
        below as f64 + 0.5 * equal as f64
    }

    /// Midpoint ECDF position of `score` within the table.
    pub fn ecdf(&self, score: f64) -> f64 {
        self.rank(score) / self.n() as f64
    }

    /// Probability that an in-distribution batch of `batch_size` rows has a
    /// median score more in-distribution than `batch_median`.
    ///
    /// Under exchangeability of table rows and batch rows, the table rank of
    /// a batch median is beta-binomial with `a = b = (m+1)/2`, whatever the
    /// score distribution. Ties count half. For `m = 1` this is the plain
    /// midpoint ECDF position over `n + 1` slots.
    pub fn violation_probability(&self, batch_median: f64, batch_size: usize) -> f64 {
        let n = self.n();
        let rank = match self.orientation {
            Orientation::HighIsOod => self.rank(batch_median),
            Orientation::LowIsOod => n as f64 - self.rank(batch_median),
        };
        let half = (batch_size.max(1) as f64 + 1.0) / 2.0;
        let dist = BetaBinomial::new(n, half, half);
        let k = rank.floor() as usize;
        let p = if rank.fract() > 0.0 {
            dist.cdf(k)
        } else {
            let below = if k == 0 { 0.0 } else { dist.cdf(k - 1) };
            below + 0.5 * dist.pmf(k)
        };
        p.clamp(0.0, 1.0)
    }
}

/// Order-statistic index `k = ceil((1 − confidence)·n)`, clamped to `[1, n]`.
pub fn order_statistic_index(n: usize, confidence: f64) -> usize {
    let alpha = 1.0 - confidence;
    // 1 − 0.95 is 0.05000000000000004 in binary; without the slack
    // ceil(0.05·100) would land on 6.
    let k = (alpha * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Score threshold at `confidence`: the k-th smallest held-out score when low
/// scores are OOD, the k-th largest otherwise.
pub fn calibrate_threshold(table: &CalibrationTable, confidence: f64) -> f64 {
    let n = table.n();
    let k = order_statistic_index(n, confidence);
    match table.orientation {
        Orientation::LowIsOod => table.scores[k - 1],
        Orientation::HighIsOod => table.scores[n - k],
    }
}

struct BetaBinomial {
    n: usize,
    a: f64,
    b: f64,
    ln_norm: f64,
}

impl BetaBinomial {
    fn new(n: usize, a: f64, b: f64) -> Self {
        BetaBinomial {
            n,
            a,
            b,
            ln_norm: ln_beta(a, b),
        }
    }

    fn pmf(&self, k: usize) -> f64 {
        if k > self.n {
            return 0.0;
        }
        let kf = k as f64;
        let nf = self.n as f64;
        (ln_binomial(self.n as u64, k as u64) + ln_beta(kf + self.a, nf - kf + self.b)
            - self.ln_norm)
            .exp()
    }

    fn cdf(&self, k: usize) -> f64 {
        if k >= self.n {
            return 1.0;
        }
        (0..=k).map(|i| self.pmf(i)).sum::<f64>().min(1.0)
    }
}
