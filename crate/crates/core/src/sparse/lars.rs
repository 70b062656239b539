//! Lasso by least-angle regression with the lasso modification.
//!
//! Solves `min ||diag(m)(D w - x)||^2 + lambda ||w||_1` by following the
//! homotopy path from `w = 0` until the common active correlation
//! `|d_j^T r|` drops to `lambda / 2`.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{check_mask, lasso_objective, Dictionary, MaskVec, SparseCode, SparseError};

/// Relative pivot below which an entering atom is treated as linearly
/// dependent on the active set and excluded.
const DEPENDENCE_TOL: f64 = 1e-10;

enum Event {
    Target,
    Enter(usize),
    Drop(usize),
}

/// Gram columns `D~^T d~_j` of the (masked) design, computed on demand.
struct Design<'a> {
    dict: &'a Dictionary,
    mask: Option<&'a MaskVec>,
}

impl Design<'_> {
    fn gram_column(&self, j: usize) -> DVector<f64> {
        match self.mask {
            None => self.dict.gram().column(j).into_owned(),
            Some(m) => {
                let mut col = self.dict.atoms().column(j).into_owned();
                m.apply(&mut col);
                self.dict.atoms().tr_mul(&col)
            }
        }
    }
}

fn cholesky_of(cols: &[DVector<f64>], active: &[usize]) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let k = active.len();
    let g = DMatrix::from_fn(k, k, |r, c| cols[c][active[r]]);
    Cholesky::new(g)
}

pub fn lasso_lars(
    dict: &Dictionary,
    x: &[f64],
    lambda: f64,
    mask: Option<&MaskVec>,
) -> Result<SparseCode, SparseError> {
    dict.check_signal(x)?;
    check_mask(dict, mask)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SparseError::InvalidParameter(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let d = dict.len();
    let target = lambda / 2.0;
    let design = Design { dict, mask };

    let mut xm = DVector::from_column_slice(x);
    if let Some(m) = mask {
        m.apply(&mut xm);
    }
    let c0 = dict.atoms().tr_mul(&xm);

    let mut beta = DVector::<f64>::zeros(d);
    let mut c = c0.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut gram_cols: Vec<DVector<f64>> = Vec::new();
    let mut is_active = vec![false; d];
    let mut excluded = vec![false; d];
    let mut just_dropped: Option<usize> = None;
    let mut pending: Option<usize> = None;

    for _ in 0..(8 * d + 100) {
        if active.is_empty() && pending.is_none() {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..d {
                if excluded[j] {
                    continue;
                }
                if best.is_none_or(|(_, v)| c[j].abs() > v) {
                    best = Some((j, c[j].abs()));
                }
            }
            match best {
                Some((j, cj)) if cj > target => pending = Some(j),
                _ => break,
            }
        }
        if let Some(j) = pending.take() {
            let col = design.gram_column(j);
            active.push(j);
            gram_cols.push(col);
            let independent = cholesky_of(&gram_cols, &active).is_some_and(|ch| {
                let l = ch.l();
                let k = active.len() - 1;
                let diag = l[(k, k)];
                diag * diag > DEPENDENCE_TOL * gram_cols[k][j].max(f64::MIN_POSITIVE)
            });
            if independent {
                is_active[j] = true;
            } else {
                active.pop();
                gram_cols.pop();
                excluded[j] = true;
                if active.is_empty() {
                    continue;
                }
            }
        }

        let k = active.len();
        let signs = DVector::from_fn(k, |r, _| c[active[r]].signum());
        let big_c = active.iter().map(|&j| c[j].abs()).fold(0.0, f64::max);
        if big_c <= target {
            break;
        }
        let Some(chol) = cholesky_of(&gram_cols, &active) else {
            break;
        };
        let dir = chol.solve(&signs);
        // a = G[:, A] dir
        let mut a = DVector::<f64>::zeros(d);
        for (r, col) in gram_cols.iter().enumerate() {
            a.axpy(dir[r], col, 1.0);
        }

        let mut gamma = big_c - target;
        let mut event = Event::Target;
        for (r, &j) in active.iter().enumerate() {
            if dir[r] != 0.0 {
                let g = -beta[j] / dir[r];
                if g > 0.0 && g < gamma {
                    gamma = g;
                    event = Event::Drop(r);
                }
            }
        }
        for j in 0..d {
            if is_active[j] || excluded[j] || just_dropped == Some(j) {
                continue;
            }
            for g in [(big_c - c[j]) / (1.0 - a[j]), (big_c + c[j]) / (1.0 + a[j])] {
                if g > 0.0 && g < gamma {
                    gamma = g;
                    event = Event::Enter(j);
                }
            }
        }

        for (r, &j) in active.iter().enumerate() {
            beta[j] += gamma * dir[r];
        }
        just_dropped = None;
        match event {
            Event::Target => break,
            Event::Enter(j) => pending = Some(j),
            Event::Drop(r) => {
                let j = active.remove(r);
                gram_cols.remove(r);
                beta[j] = 0.0;
                is_active[j] = false;
                just_dropped = Some(j);
            }
        }
        // refresh correlations from scratch to avoid drift
        c.copy_from(&c0);
        for (r, &j) in active.iter().enumerate() {
            c.axpy(-beta[j], &gram_cols[r], 1.0);
        }
    }

    // polish: on the final support the optimality conditions are linear
    if !active.is_empty() {
        if let Some(chol) = cholesky_of(&gram_cols, &active) {
            let rhs = DVector::from_fn(active.len(), |r, _| {
                let j = active[r];
                c0[j] - target * beta[j].signum()
            });
            let refined = chol.solve(&rhs);
            let consistent = active
                .iter()
                .enumerate()
                .all(|(r, &j)| refined[r] != 0.0 && refined[r].signum() == beta[j].signum());
            if consistent {
                for (r, &j) in active.iter().enumerate() {
                    beta[j] = refined[r];
                }
            }
        }
    }
    let objective = lasso_objective(dict, x, &beta, lambda, mask);
    Ok(SparseCode::from_weights(beta, objective))
}
