//! Per-patch channel standardization and ZCA whitening.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::dataset::{PatchBatch, PATCH_BLOCK, PATCH_LEN};

/// Variance floor added under the square root during standardization.
pub const STANDARDIZE_STABILIZER: f64 = 10.0;
/// Default ZCA regularizer.
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WhiteningError {
    #[error("whitening needs at least {needed} patches, got {found}")]
    TooFewPatches { needed: usize, found: usize },
    #[error("covariance is singular (smallest eigenvalue {0:e}); use a positive epsilon")]
    Singular(f64),
    #[error("epsilon must be finite and non-negative, got {0}")]
    BadEpsilon(f64),
    #[error("whitener expects length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Standardize each channel block of a patch in place using only its
/// masked-in entries. Blocks with fewer than two valid entries become zero.
pub fn standardize(patch: &mut [f64], mask: &[bool]) {
    debug_assert_eq!(patch.len(), PATCH_LEN);
    for (block, bmask) in patch.chunks_mut(PATCH_BLOCK).zip(mask.chunks(PATCH_BLOCK)) {
        let n = bmask.iter().filter(|&&m| m).count();
        if n < 2 {
            block.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let mut sum = 0.0;
        for (v, &m) in block.iter().zip(bmask) {
            if m {
                sum += v;
            }
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for (v, &m) in block.iter().zip(bmask) {
            if m {
                ss += (v - mean) * (v - mean);
            }
        }
        let scale = 1.0 / (ss / n as f64 + STANDARDIZE_STABILIZER).sqrt();
        for (v, &m) in block.iter_mut().zip(bmask) {
            *v = if m { (*v - mean) * scale } else { 0.0 };
        }
    }
}

/// Standardize every patch of a batch in place.
pub fn standardize_batch(batch: &mut PatchBatch) {
    batch.map_patches(standardize);
}

/// Affine decorrelating map `x -> T (x - mean)` with `T = (Cov + eps I)^(-1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    mean: DVector<f64>,
    transform: DMatrix<f64>,
    epsilon: f64,
    fitted_on: usize,
}

impl Whitener {
    /// Zero mean, identity transform: used when whitening is disabled.
    pub fn identity(n: usize) -> Self {
        Self {
            mean: DVector::zeros(n),
            transform: DMatrix::identity(n, n),
            epsilon: 0.0,
            fitted_on: 0,
        }
    }

    pub fn from_parts(
        mean: DVector<f64>,
        transform: DMatrix<f64>,
        epsilon: f64,
        fitted_on: usize,
    ) -> Result<Self, WhiteningError> {
        if transform.nrows() != mean.len() || transform.ncols() != mean.len() {
            return Err(WhiteningError::DimensionMismatch {
                expected: mean.len(),
                found: transform.nrows(),
            });
        }
        Ok(Self {
            mean,
            transform,
            epsilon,
            fitted_on,
        })
    }

    /// Fit on the columns of `data` (`n x N`, one sample per column).
    pub fn fit_columns(data: &DMatrix<f64>, epsilon: f64) -> Result<Self, WhiteningError> {
        let (n, count) = data.shape();
        if count < n.max(1) {
            return Err(WhiteningError::TooFewPatches {
                needed: n,
                found: count,
            });
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(WhiteningError::BadEpsilon(epsilon));
        }
        let mean = data.column_mean();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let cov = (&centered * centered.transpose()) / count as f64;
        let eig = SymmetricEigen::new(cov);
        let mut scales = DVector::zeros(n);
        for (s, &lam) in scales.iter_mut().zip(eig.eigenvalues.iter()) {
            let v = lam.max(0.0) + epsilon;
            if v <= 0.0 || v < 1e-12 * eig.eigenvalues.amax() {
                return Err(WhiteningError::Singular(lam));
            }
            *s = 1.0 / v.sqrt();
        }
        let v = &eig.eigenvectors;
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= scales[j];
        }
        let t = &scaled * v.transpose();
        let transform = (&t + t.transpose()) * 0.5;
        Ok(Self {
            mean,
            transform,
            epsilon,
            fitted_on: count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }

    pub fn apply(&self, patch: &[f64]) -> Result<DVector<f64>, WhiteningError> {
        if patch.len() != self.dim() {
            return Err(WhiteningError::DimensionMismatch {
                expected: self.dim(),
                found: patch.len(),
            });
        }
        let centered = DVector::from_column_slice(patch) - &self.mean;
        Ok(&self.transform * centered)
    }

    /// Whiten every column of `data` (`n x N`).
    pub fn apply_columns(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        &self.transform * centered
    }
}

/// Patches of a batch as the columns of an `n x N` matrix.
pub fn batch_matrix(batch: &PatchBatch) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(PATCH_LEN, batch.len());
    for (i, mut col) in m.column_iter_mut().enumerate() {
        col.copy_from_slice(batch.patch(i));
    }
    m
}

/// Fit a ZCA whitener on an already standardized batch.
pub fn fit_whitener(batch: &PatchBatch, epsilon: f64) -> Result<Whitener, WhiteningError> {
    if batch.len() < PATCH_LEN {
        return Err(WhiteningError::TooFewPatches {
            needed: PATCH_LEN,
            found: batch.len(),
        });
    }
    Whitener::fit_columns(&batch_matrix(batch), epsilon)
}

pub fn apply_whitener(wh: &Whitener, patch: &[f64]) -> Result<DVector<f64>, WhiteningError> {
    wh.apply(patch)
}

/// Whiten a batch in place; masks are carried unchanged.
pub fn whiten_batch(wh: &Whitener, batch: &mut PatchBatch) {
    let out = wh.apply_columns(&batch_matrix(batch));
    for i in 0..batch.len() {
        batch.patch_mut(i).copy_from_slice(out.column(i).as_slice());
    }
}
