//! Closed-form encoders: soft-thresholding and the triangle k-means code.

use nalgebra::{DMatrix, DVector};

use super::{Dictionary, SparseCode, SparseError};

/// `w_j = sign(d_j . x) max(0, |d_j . x| - tau)`.
pub fn soft_threshold(dict: &Dictionary, x: &[f64], tau: f64) -> Result<SparseCode, SparseError> {
    dict.check_signal(x)?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(SparseError::InvalidParameter(format!(
            "tau must be >= 0, got {tau}"
        )));
    }
    let corr = dict.atoms().tr_mul(&DVector::from_column_slice(x));
    let w = corr.map(|c| shrink(c, tau));
    let objective = super::masked_residual_sq(dict, x, &w, None);
    Ok(SparseCode::from_weights(w, objective))
}

#[inline]
pub(crate) fn shrink(c: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        c
    } else {
        c.signum() * (c.abs() - tau).max(0.0)
    }
}

/// Triangle activation `max(0, mean(z) - z_j)` with `z_j = ||x - c_j||`.
///
/// `centroids` holds one (unnormalized) centroid per column.
pub fn kmeans_tri(centroids: &DMatrix<f64>, x: &[f64]) -> Result<DVector<f64>, SparseError> {
    if x.len() != centroids.nrows() {
        return Err(SparseError::DimensionMismatch {
            expected: centroids.nrows(),
            found: x.len(),
        });
    }
    let z = DVector::from_iterator(
        centroids.ncols(),
        centroids
            .column_iter()
            .map(|c| dist_sq(x, c.as_slice()).sqrt()),
    );
    Ok(triangle(&z))
}

/// Squared Euclidean distance with a fixed summation order.
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let t = x[l] - y[l];
            acc[l] += t * t;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn triangle(z: &DVector<f64>) -> DVector<f64> {
    if z.is_empty() {
        return z.clone();
    }
    let mean = z.mean();
    z.map(|v| (mean - v).max(0.0))
}
