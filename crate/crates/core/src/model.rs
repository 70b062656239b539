//! Squared-hinge linear SVM trained with L-BFGS.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;

/// Regularization grid for cross-validation.
pub const C_GRID: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training data needs both classes")]
    SingleClass,
    #[error("feature length mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("labels must be +1 or -1, got {0}")]
    BadLabel(i8),
    #[error("C must be positive and finite, got {0}")]
    BadC(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsParams {
    pub memory: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-6,
            max_iters: 1000,
        }
    }
}

/// Linear classifier over internally standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// Per-dimension training mean and scale used to standardize inputs.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

impl LinearModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    fn check(&self, f: &[f64]) -> Result<(), ModelError> {
        if f.len() != self.feature_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim(),
                found: f.len(),
            });
        }
        Ok(())
    }

    pub fn score(&self, f: &FeatureVector) -> Result<f64, ModelError> {
        self.score_slice(&f.values)
    }

    pub fn score_slice(&self, f: &[f64]) -> Result<f64, ModelError> {
        self.check(f)?;
        let mut s = self.bias;
        for (((v, w), mu), sd) in f
            .iter()
            .zip(&self.weights)
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
        {
            s += w * (v - mu) / sd;
        }
        Ok(s)
    }

    /// `+1` when the score is non-negative.
    pub fn predict(&self, f: &FeatureVector) -> Result<i8, ModelError> {
        Ok(if self.score(f)? >= 0.0 { 1 } else { -1 })
    }
}

/// Standardized training data: `rows[i]` is example `i`.
struct Problem {
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
    c: f64,
}

const CHUNK: usize = 64;

impl Problem {
    /// `1/2 |w|^2 + C sum max(0, 1 - y (w.x + b))^2` and its gradient;
    /// `params = [w..., b]`.
    fn eval(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let dim = params.len() - 1;
        let (w, b) = (&params[..dim], params[dim]);
        // per-chunk partial sums, combined in chunk order
        let partials: Vec<(f64, Vec<f64>)> = self
            .rows
            .par_chunks(CHUNK)
            .zip(self.labels.par_chunks(CHUNK))
            .map(|(rows, labels)| {
                let mut loss = 0.0;
                let mut g = vec![0.0; dim + 1];
                for (x, &y) in rows.iter().zip(labels) {
                    let margin = y * (dot(w, x) + b);
                    if margin < 1.0 {
                        let slack = 1.0 - margin;
                        loss += slack * slack;
                        let coef = -2.0 * y * slack;
                        for (gi, xi) in g[..dim].iter_mut().zip(x) {
                            *gi += coef * xi;
                        }
                        g[dim] += coef;
                    }
                }
                (loss, g)
            })
            .collect();
        let mut loss = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (l, g) in partials {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        for v in grad.iter_mut() {
            *v *= self.c;
        }
        for i in 0..dim {
            grad[i] += w[i];
        }
        0.5 * dot(w, w) + self.c * loss
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective and gradient at `params = [w..., b]` for already standardized
/// rows; exposed for gradient checks.
pub fn svm_objective(rows: &[Vec<f64>], labels: &[i8], c: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let p = Problem {
        rows: rows.to_vec(),
        labels: labels.iter().map(|&y| y as f64).collect(),
        c,
    };
    let mut g = vec![0.0; params.len()];
    let f = p.eval(params, &mut g);
    (f, g)
}

/// Outcome of an L-BFGS run.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub iterations: usize,
    /// Objective after every accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Minimize `f` from `x` with limited-memory BFGS and Armijo backtracking.
pub fn lbfgs<F>(mut f: F, x: &mut [f64], params: &LbfgsParams) -> LbfgsReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut trace = vec![fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iters {
        if dot(&g, &g).sqrt() < params.grad_tol {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for k in (0..m).rev() {
            alpha[k] = rho_hist[k] * dot(&s_hist[k], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[k]) {
                *d -= alpha[k] * y;
            }
        }
        if m > 0 {
            let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for k in 0..m {
            let beta = rho_hist[k] * dot(&y_hist[k], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[k]) {
                *d += (alpha[k] - beta) * s;
            }
        }
        let mut slope = dot(&g, &dir);
        if slope.is_nan() || slope >= 0.0 {
            // not a descent direction: restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if m == 0 {
            1.0 / dot(&g, &g).sqrt().max(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
                    if s_hist.len() == params.memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                    s_hist.push(s);
                    y_hist.push(y);
                    rho_hist.push(1.0 / sy);
                }
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                let stalled = fx - f_new <= 1e-15 * fx.abs().max(1.0);
                fx = f_new;
                trace.push(fx);
                iterations += 1;
                if stalled {
                    converged = dot(&g, &g).sqrt() < params.grad_tol.max(1e-8 * fx.abs());
                    return LbfgsReport {
                        iterations,
                        objective_trace: trace,
                        converged,
                    };
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    LbfgsReport {
        iterations,
        objective_trace: trace,
        converged,
    }
}

/// Per-dimension mean and scale (population std, 1 when constant).
fn standardization(features: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let dim = features[0].len();
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for f in features {
        for i in 0..dim {
            let t = f[i] - mean[i];
            var[i] += t * t;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

pub fn train_svm(
    features: &[FeatureVector],
    labels: &[i8],
    c: f64,
) -> Result<LinearModel, ModelError> {
    let slices: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
    train_svm_with(&slices, labels, c, &LbfgsParams::default()).map(|(m, _)| m)
}

/// Train on raw feature slices; also returns the optimizer report.
pub fn train_svm_with(
    features: &[&[f64]],
    labels: &[i8],
    c: f64,
    params: &LbfgsParams,
) -> Result<(LinearModel, LbfgsReport), ModelError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(ModelError::BadC(c));
    }
    if features.len() != labels.len() {
        return Err(ModelError::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(ModelError::BadLabel(y));
    }
    if !(labels.contains(&1) && labels.contains(&-1)) {
        return Err(ModelError::SingleClass);
    }
    let dim = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(ModelError::DimensionMismatch {
            expected: dim,
            found: f.len(),
        });
    }
    let (mean, scale) = standardization(features);
    let rows = features
        .iter()
        .map(|f| (0..dim).map(|i| (f[i] - mean[i]) / scale[i]).collect())
        .collect();
    let problem = Problem {
        rows,
        labels: labels.iter().map(|&y| y as f64).collect(),
        c,
    };
    let mut x = vec![0.0; dim + 1];
    let report = lbfgs(|p, g| problem.eval(p, g), &mut x, params);
    let bias = x.pop().unwrap();
    Ok((
        LinearModel {
            weights: x,
            bias,
            c,
            feature_mean: mean,
            feature_scale: scale,
        },
        report,
    ))
}
