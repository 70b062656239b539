//! Sparse weight solvers over a fixed dictionary.
//!
//! All solvers accept an optional binary row mask. With a mask `m` they
//! work on the rows where `m = 1` only, i.e. on `diag(m) D` and `diag(m) x`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

mod lars;
mod omp;
mod threshold;

pub use lars::lasso_lars;
pub use omp::{omp, omp_path};
pub(crate) use threshold::dist_sq;
pub use threshold::{kmeans_tri, soft_threshold};

/// Column norms must be within this of one.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("atom {0} has zero norm")]
    ZeroAtom(usize),
    #[error("atom {index} has norm {norm}, expected 1")]
    NotUnitNorm { index: usize, norm: f64 },
}

/// `n x d` matrix whose columns (atoms) have unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    gram: OnceLock<DMatrix<f64>>,
}

impl PartialEq for Dictionary {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms
    }
}

impl Dictionary {
    /// Wrap a matrix whose columns are already unit norm.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self, SparseError> {
        for (j, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(SparseError::NotUnitNorm { index: j, norm });
            }
        }
        Ok(Self {
            atoms,
            gram: OnceLock::new(),
        })
    }

    /// Normalize every column of `atoms` to unit norm.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self, SparseError> {
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(SparseError::ZeroAtom(j));
            }
            col /= norm;
        }
        Ok(Self {
            atoms,
            gram: OnceLock::new(),
        })
    }

    /// Keep only `rows`. The resulting columns are generally not unit norm;
    /// the solvers accept that, which is what makes masked and row-deleted
    /// problems comparable.
    pub fn select_rows(&self, rows: &[usize]) -> Dictionary {
        let atoms = DMatrix::from_fn(rows.len(), self.len(), |r, c| self.atoms[(rows[r], c)]);
        Dictionary {
            atoms,
            gram: OnceLock::new(),
        }
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_atoms(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Signal dimension `n`.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Atom count `d`.
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    /// `D^T D`, computed once.
    pub fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| self.atoms.tr_mul(&self.atoms))
    }

    fn check_signal(&self, x: &[f64]) -> Result<(), SparseError> {
        if x.len() != self.dim() {
            return Err(SparseError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// Binary row mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVec(Vec<bool>);

impl MaskVec {
    pub fn new(m: Vec<bool>) -> Self {
        Self(m)
    }

    pub fn all_valid(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_all_valid(&self) -> bool {
        self.0.iter().all(|&m| m)
    }

    pub fn is_all_masked(&self) -> bool {
        self.0.iter().all(|&m| !m)
    }

    fn apply(&self, v: &mut DVector<f64>) {
        for (x, &m) in v.iter_mut().zip(&self.0) {
            if !m {
                *x = 0.0;
            }
        }
    }
}

/// Sparse weights with their support and final objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub weights: DVector<f64>,
    /// Indices of nonzero weights, ascending.
    pub support: Vec<usize>,
    pub objective: f64,
}

impl SparseCode {
    pub(crate) fn from_weights(weights: DVector<f64>, objective: f64) -> Self {
        let support = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            weights,
            support,
            objective,
        }
    }
}

fn check_mask(dict: &Dictionary, mask: Option<&MaskVec>) -> Result<(), SparseError> {
    match mask {
        Some(m) if m.len() != dict.dim() => Err(SparseError::DimensionMismatch {
            expected: dict.dim(),
            found: m.len(),
        }),
        _ => Ok(()),
    }
}

/// Masked squared reconstruction error `||diag(m)(D w - x)||^2`.
pub fn masked_residual_sq(
    dict: &Dictionary,
    x: &[f64],
    w: &DVector<f64>,
    mask: Option<&MaskVec>,
) -> f64 {
    let mut r = dict.atoms() * w - DVector::from_column_slice(x);
    if let Some(m) = mask {
        m.apply(&mut r);
    }
    r.norm_squared()
}

/// Lasso objective `||diag(m)(D w - x)||^2 + lambda ||w||_1`.
pub fn lasso_objective(
    dict: &Dictionary,
    x: &[f64],
    w: &DVector<f64>,
    lambda: f64,
    mask: Option<&MaskVec>,
) -> f64 {
    masked_residual_sq(dict, x, w, mask) + lambda * w.lp_norm(1)
}
