use nalgebra::{DMatrix, DVector};

use super::density::VARIANCE_FLOOR;
use super::DetectorError;
use crate::data::NumericMatrix;

/// Lower bound on the covariance shrinkage intensity.
pub const SHRINKAGE_FLOOR: f64 = 0.05;

/// Mean, sample covariance and the shrinkage toward its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub shrinkage: f64,
}

/// A factorized model ready for scoring many rows.
pub(crate) struct MahalanobisScorer {
    mean: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl MahalanobisModel {
    /// Sample covariance with shrinkage `max(SHRINKAGE_FLOOR, d/n)`.
    pub fn fit(data: &NumericMatrix) -> Self {
        let (mean, _) = data.column_moments();
        let d = data.n_features();
        let n = data.n_rows();
        let mut cov = vec![vec![0.0; d]; d];
        for row in &data.rows {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in i..d {
                    cov[i][j] += di * (row[j] - mean[j]);
                }
            }
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        #[allow(clippy::needless_range_loop)]
        for i in 0..d {
            for j in i..d {
                cov[i][j] /= denom;
                cov[j][i] = cov[i][j];
            }
        }
        let shrinkage = (d as f64 / n.max(1) as f64).clamp(SHRINKAGE_FLOOR, 1.0);
        MahalanobisModel {
            mean,
            covariance: cov,
            shrinkage,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(1 − λ)·S + λ·diag(S)` with the diagonal floored at the variance floor.
    pub fn regularized_covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let lambda = self.shrinkage;
        DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                self.covariance[i][i].max(VARIANCE_FLOOR)
            } else {
                (1.0 - lambda) * self.covariance[i][j]
            }
        })
    }

    pub(crate) fn scorer(&self) -> Result<MahalanobisScorer, DetectorError> {
        let chol = self
            .regularized_covariance()
            .cholesky()
            .ok_or(DetectorError::SingularCovariance)?;
        Ok(MahalanobisScorer {
            mean: DVector::from_vec(self.mean.clone()),
            chol,
        })
    }

    /// `sqrt((x − μ)ᵀ Σ⁻¹ (x − μ))`.
    pub fn score(&self, x: &[f64]) -> Result<f64, DetectorError> {
        self.scorer()?.score(x)
    }
}

impl MahalanobisScorer {
    pub(crate) fn score(&self, x: &[f64]) -> Result<f64, DetectorError> {
        if x.len() != self.mean.len() {
            return Err(DetectorError::DimensionMismatch {
                expected: self.mean.len(),
                found: x.len(),
            });
        }
        let diff = DVector::from_column_slice(x) - &self.mean;
        let l = self.chol.l();
        let y = l
            .solve_lower_triangular(&diff)
            .ok_or(DetectorError::SingularCovariance)?;
        Ok(y.norm())
    }
}
