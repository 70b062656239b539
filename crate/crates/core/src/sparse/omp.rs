//! Orthogonal matching pursuit with an optional row mask.

use nalgebra::DVector;

use super::{check_mask, masked_residual_sq, Dictionary, MaskVec, SparseCode, SparseError};

const RESIDUAL_TOL: f64 = 1e-10;
/// A candidate whose masked column keeps less than this fraction of its norm
/// after projection onto the selected atoms is skipped as dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Codes after each greedy step (the last one is the OMP solution).
pub fn omp_path(
    dict: &Dictionary,
    x: &[f64],
    gamma: usize,
    mask: Option<&MaskVec>,
) -> Result<Vec<SparseCode>, SparseError> {
    dict.check_signal(x)?;
    check_mask(dict, mask)?;
    let d = dict.len();
    if gamma == 0 || gamma > d {
        return Err(SparseError::InvalidParameter(format!(
            "sparsity must be in 1..={d}, got {gamma}"
        )));
    }
    let atoms = dict.atoms();
    let mut target = DVector::from_column_slice(x);
    if let Some(m) = mask {
        m.apply(&mut target);
    }

    let mut residual = target.clone();
    // orthonormal basis of the selected masked atoms and the triangular
    // factor expressing those atoms in it
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut r_factor: Vec<Vec<f64>> = Vec::new();
    let mut selected: Vec<usize> = Vec::new();
    let mut blocked = vec![false; d];
    let mut path = Vec::new();

    while selected.len() < gamma && residual.norm() >= RESIDUAL_TOL {
        let corr = atoms.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..d {
            if blocked[j] {
                continue;
            }
            if best.is_none_or(|(_, v)| corr[j].abs() > v) {
                best = Some((j, corr[j].abs()));
            }
        }
        let Some((j, c)) = best else { break };
        if c == 0.0 {
            break;
        }
        blocked[j] = true;

        let mut v = atoms.column(j).into_owned();
        if let Some(m) = mask {
            m.apply(&mut v);
        }
        let original = v.norm();
        let mut coeffs = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (q, co) in basis.iter().zip(coeffs.iter_mut()) {
                let p = q.dot(&v);
                v.axpy(-p, q, 1.0);
                *co += p;
            }
        }
        let rest = v.norm();
        if original == 0.0 || rest <= DEPENDENCE_TOL * original {
            // dependent on the current support: skip this atom for good
            continue;
        }
        v /= rest;
        coeffs.push(rest);
        basis.push(v);
        r_factor.push(coeffs);
        selected.push(j);

        residual.copy_from(&target);
        for _ in 0..2 {
            for q in &basis {
                let p = q.dot(&residual);
                residual.axpy(-p, q, 1.0);
            }
        }
        path.push(solve_code(
            dict, x, mask, &target, &basis, &r_factor, &selected,
        ));
    }
    if path.is_empty() {
        let w = DVector::zeros(d);
        let obj = masked_residual_sq(dict, x, &w, mask);
        path.push(SparseCode::from_weights(w, obj));
    }
    Ok(path)
}

fn solve_code(
    dict: &Dictionary,
    x: &[f64],
    mask: Option<&MaskVec>,
    target: &DVector<f64>,
    basis: &[DVector<f64>],
    r_factor: &[Vec<f64>],
    selected: &[usize],
) -> SparseCode {
    let k = selected.len();
    let z: Vec<f64> = basis.iter().map(|q| q.dot(target)).collect();
    // back substitution on R w = z, R[i][col] = r_factor[col][i]
    let mut w_sel = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = z[i];
        for col in i + 1..k {
            acc -= r_factor[col][i] * w_sel[col];
        }
        w_sel[i] = acc / r_factor[i][i];
    }
    let mut w = DVector::zeros(dict.len());
    for (&j, &v) in selected.iter().zip(&w_sel) {
        w[j] = v;
    }
    let obj = masked_residual_sq(dict, x, &w, mask);
    SparseCode::from_weights(w, obj)
}

/// Greedy `gamma`-sparse approximation of `x`; ties go to the lowest atom index.
pub fn omp(
    dict: &Dictionary,
    x: &[f64],
    gamma: usize,
    mask: Option<&MaskVec>,
) -> Result<SparseCode, SparseError> {
    Ok(omp_path(dict, x, gamma, mask)?
        .pop()
        .expect("path is never empty"))
}
