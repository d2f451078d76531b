use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DetectorError;
use crate::data::NumericMatrix;

/// Lower bound applied to every fitted variance.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Diagonal Gaussian density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianDensity {
    pub fn standard(d: usize) -> Self {
        GaussianDensity {
            mean: vec![0.0; d],
            variance: vec![1.0; d],
        }
    }

    /// Fit by sample moments; variances are floored at [`VARIANCE_FLOOR`].
    pub fn fit(data: &NumericMatrix) -> Self {
        let (mean, var) = data.column_moments();
        GaussianDensity {
            mean,
            variance: var.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `Σ_i −½·log(2π·var_i) − (x_i − mean_i)² / (2·var_i)`
    pub fn logpdf(&self, x: &[f64]) -> Result<f64, DetectorError> {
        if x.len() != self.dim() {
            return Err(DetectorError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.variance)
            .zip(x)
            .map(|((m, v), xi)| -0.5 * (2.0 * PI * v).ln() - (xi - m) * (xi - m) / (2.0 * v))
            .sum())
    }
}

/// Background-statistics corruption for the likelihood-ratio detector: each
/// cell independently, with probability `rate`, gets Gaussian noise with
/// standard deviation twice its column's standard deviation.
pub fn perturb_background(train: &NumericMatrix, rate: f64, seed: u64) -> NumericMatrix {
    let (_, var) = train.column_moments();
    let noise_sd: Vec<f64> = var.iter().map(|v| 2.0 * v.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = train
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&noise_sd)
                .map(|(&x, &sd)| {
                    if rng.random::<f64>() < rate {
                        let z: f64 = rng.sample(StandardNormal);
                        x + sd * z
                    } else {
                        x
                    }
                })
                .collect()
        })
        .collect();
    NumericMatrix::new(train.features.clone(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::feature_names;

    fn normal_matrix(n: usize, d: usize, seed: u64) -> NumericMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        NumericMatrix::new(feature_names(d), rows)
    }

    // Closed forms evaluated to 30 digits offline.
    #[test]
    fn logpdf_closed_forms() {
        let g1 = GaussianDensity::standard(1);
        assert!((g1.logpdf(&[0.0]).unwrap() - (-0.918_938_533_204_672_8)).abs() < 1e-9);
        let g2 = GaussianDensity::standard(2);
        assert!((g2.logpdf(&[0.0, 0.0]).unwrap() - (-1.837_877_066_409_345_5)).abs() < 1e-9);
        let g = GaussianDensity {
            mean: vec![1.0],
            variance: vec![4.0],
        };
        assert!((g.logpdf(&[3.0]).unwrap() - (-2.112_085_713_764_618)).abs() < 1e-9);
        assert!(matches!(
            g.logpdf(&[1.0, 2.0]),
            Err(DetectorError::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn perturb_rate_zero_is_identity() {
        let m = normal_matrix(50, 3, 1);
        assert_eq!(perturb_background(&m, 0.0, 9), m);
    }

    #[test]
    fn perturb_leaves_constant_feature() {
        let mut m = normal_matrix(50, 2, 2);
        for r in &mut m.rows {
            r[1] = 4.25;
        }
        let p = perturb_background(&m, 1.0, 3);
        assert!(p.rows.iter().all(|r| r[1] == 4.25));
        assert!(p.rows.iter().zip(&m.rows).all(|(a, b)| a[0] != b[0]));
    }

    #[test]
    fn perturb_fraction_concentrates() {
        let m = normal_matrix(1000, 8, 4);
        let p = perturb_background(&m, 0.2, 5);
        let changed = p
            .rows
            .iter()
            .zip(&m.rows)
            .flat_map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y))
            .count();
        let frac = changed as f64 / 8000.0;
        assert!((frac - 0.2).abs() <= 0.04, "{frac}");
        assert_eq!(perturb_background(&m, 0.2, 5), p);
    }

    #[test]
    fn fit_matches_direct_moments() {
        let m = normal_matrix(300, 3, 6);
        let g = GaussianDensity::fit(&m);
        for j in 0..3 {
            let col: Vec<f64> = m.rows.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / 300.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 299.0;
            assert!((g.mean[j] - mean).abs() < 1e-12);
            assert!((g.variance[j] - var).abs() < 1e-12);
        }
    }
}
