//! Dictionary learners over whitened patch batches.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PatchBatch, PATCH_LEN};
use crate::features::{Codebook, EncoderConfig, EncoderKind};
use crate::sparse::{self, dist_sq, Dictionary, SparseError};
use crate::whitening::batch_matrix;

pub const DEFAULT_ATOMS: usize = 300;
pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_MINIBATCH: usize = 256;
pub const SC_LAMBDA_GRID: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
pub const OMP_GAMMA_GRID: [usize; 4] = [1, 5, 10, 15];
/// Dictionary sizes of the size sweep.
pub const SIZE_SWEEP: [usize; 6] = [50, 100, 200, 300, 400, 600];

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 50;
const GSVQ_CONVERGED: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DictLearnError {
    #[error("need at least {needed} usable patches, got {found}")]
    InsufficientPatches { needed: usize, found: usize },
    #[error("invalid dictionary config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictMethod {
    Sc,
    Omp,
    Gsvq,
    Nkm,
    Rp,
    R,
}

impl DictMethod {
    pub const ALL: [DictMethod; 6] = [
        Self::Sc,
        Self::Omp,
        Self::Gsvq,
        Self::Nkm,
        Self::Rp,
        Self::R,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sc => "sc",
            Self::Omp => "omp",
            Self::Gsvq => "gsvq",
            Self::Nkm => "nkm",
            Self::Rp => "rp",
            Self::R => "r",
        }
    }
}

impl fmt::Display for DictMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DictMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!("unknown dictionary method '{s}' (expected sc, omp, gsvq, nkm, rp, r)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictLearnConfig {
    pub method: DictMethod,
    pub atoms: usize,
    /// Lasso penalty for SC.
    pub lambda: f64,
    /// Sparsity for OMP.
    pub gamma: usize,
    /// Passes over the batch for SC/OMP; iteration cap for GSVQ and k-means.
    pub epochs: usize,
    pub minibatch: usize,
    pub seed: u64,
}

impl DictLearnConfig {
    pub fn new(method: DictMethod, atoms: usize) -> Self {
        Self {
            method,
            atoms,
            lambda: 1.0,
            gamma: 5,
            epochs: DEFAULT_EPOCHS,
            minibatch: DEFAULT_MINIBATCH,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), DictLearnError> {
        let bad = |m: String| Err(DictLearnError::InvalidConfig(m));
        if self.atoms == 0 {
            return bad("atom count must be positive".into());
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return bad("epochs and minibatch must be positive".into());
        }
        match self.method {
            DictMethod::Sc if !(self.lambda.is_finite() && self.lambda >= 0.0) => {
                bad(format!("lambda {}", self.lambda))
            }
            DictMethod::Omp if self.gamma == 0 || self.gamma > self.atoms => {
                bad(format!("gamma {} outside 1..={}", self.gamma, self.atoms))
            }
            _ => Ok(()),
        }
    }
}

/// The encoder paired with each learner when no encoder is forced.
pub fn natural_encoder_for(cfg: &DictLearnConfig) -> EncoderConfig {
    match cfg.method {
        DictMethod::Sc => EncoderConfig::new(EncoderKind::Sc, cfg.lambda),
        DictMethod::Omp => EncoderConfig::new(EncoderKind::Omp, cfg.gamma as f64),
        DictMethod::Gsvq => EncoderConfig::new(EncoderKind::Omp, 1.0),
        DictMethod::Rp | DictMethod::R => EncoderConfig::new(EncoderKind::St, 0.0),
        DictMethod::Nkm => EncoderConfig::new(EncoderKind::KmeansTri, 0.0),
    }
}

/// Learned codebook plus the per-iteration training objective.
///
/// The trace holds the lasso/OMP reconstruction objective per epoch (SC,
/// OMP), the residual energy per iteration (GSVQ) or the inertia per Lloyd
/// iteration (NKM); it is empty for RP and R.
#[derive(Debug, Clone)]
pub struct Learned {
    pub codebook: Codebook,
    pub trace: Vec<f64>,
}

pub fn learn_dictionary(
    batch: &PatchBatch,
    cfg: &DictLearnConfig,
) -> Result<Learned, DictLearnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.method == DictMethod::R {
        let m = DMatrix::from_fn(PATCH_LEN, cfg.atoms, |_, _| rng.gen::<f64>());
        return Ok(Learned {
            codebook: Codebook::new(Dictionary::from_unnormalized(m)?),
            trace: Vec::new(),
        });
    }
    let x = batch_matrix(batch);
    match cfg.method {
        DictMethod::Rp => {
            let m = random_patches(&x, cfg.atoms, &mut rng)?;
            Ok(Learned {
                codebook: Codebook::new(Dictionary::from_unnormalized(m)?),
                trace: Vec::new(),
            })
        }
        DictMethod::Nkm => {
            let (centroids, trace) = kmeans(&x, cfg.atoms, cfg.epochs, &mut rng)?;
            let dictionary = Dictionary::from_unnormalized(centroids.clone())?;
            Ok(Learned {
                codebook: Codebook {
                    dictionary,
                    centroids: Some(centroids),
                },
                trace,
            })
        }
        DictMethod::Gsvq => {
            let init = sphere_seeding(&x, cfg.atoms, &mut rng)?;
            let (d, trace) = gsvq(&x, init, cfg.epochs);
            Ok(Learned {
                codebook: Codebook::new(Dictionary::new(d)?),
                trace,
            })
        }
        DictMethod::Sc | DictMethod::Omp => {
            let (d, trace) = odl(&x, cfg, &mut rng)?;
            Ok(Learned {
                codebook: Codebook::new(Dictionary::new(d)?),
                trace,
            })
        }
        DictMethod::R => unreachable!(),
    }
}

fn nonzero_columns(x: &DMatrix<f64>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&i| x.column(i).norm() > 0.0)
        .collect()
}

/// `d` distinct nonzero patches, chosen uniformly without replacement.
fn random_patches(
    x: &DMatrix<f64>,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>, DictLearnError> {
    let usable = nonzero_columns(x);
    if usable.len() < d {
        return Err(DictLearnError::InsufficientPatches {
            needed: d,
            found: usable.len(),
        });
    }
    let picks = index::sample(rng, usable.len(), d);
    let cols: Vec<_> = picks.iter().map(|i| x.column(usable[i])).collect();
    Ok(DMatrix::from_columns(&cols))
}

fn normalized(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

/// Draw an index with probability proportional to `weights`.
fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    let mut t = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = Some(i);
            if t < w {
                return Some(i);
            }
            t -= w;
        }
    }
    last
}

/// Nearest centroid and its squared distance; ties go to the lower index.
fn nearest(x: &[f64], centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.column_iter().enumerate() {
        let dd = dist_sq(x, c.as_slice());
        if dd < best.1 {
            best = (j, dd);
        }
    }
    best
}

/// k-means++ seeding then Lloyd iterations until assignments stop changing
/// or `max_iters` is reached. Empty clusters move to the worst-fit point.
pub(crate) fn kmeans(
    x: &DMatrix<f64>,
    k: usize,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, Vec<f64>), DictLearnError> {
    let n = x.nrows();
    let usable = nonzero_columns(x);
    if usable.len() < k {
        return Err(DictLearnError::InsufficientPatches {
            needed: k,
            found: usable.len(),
        });
    }
    let npts = x.ncols();
    let mut centroids = DMatrix::zeros(n, k);
    let first = usable[rng.gen_range(0..usable.len())];
    centroids.column_mut(0).copy_from(&x.column(first));
    let mut d2: Vec<f64> = (0..npts)
        .into_par_iter()
        .map(|i| dist_sq(x.column(i).as_slice(), centroids.column(0).as_slice()))
        .collect();
    for j in 1..k {
        let pick =
            weighted_pick(&d2, rng).unwrap_or_else(|| usable[rng.gen_range(0..usable.len())]);
        centroids.column_mut(j).copy_from(&x.column(pick));
        let c = centroids.column(j).clone_owned();
        d2.par_iter_mut().enumerate().for_each(|(i, v)| {
            *v = v.min(dist_sq(x.column(i).as_slice(), c.as_slice()));
        });
    }

    let mut assign = vec![usize::MAX; npts];
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        let found: Vec<(usize, f64)> = (0..npts)
            .into_par_iter()
            .map(|i| nearest(x.column(i).as_slice(), &centroids))
            .collect();
        let inertia: f64 = found.iter().map(|f| f.1).sum();
        trace.push(inertia);
        let changed = found.iter().zip(&assign).any(|(f, &a)| f.0 != a);
        for (a, f) in assign.iter_mut().zip(&found) {
            *a = f.0;
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(n, k);
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            sums.column_mut(a).axpy(1.0, &x.column(i), 1.0);
            counts[a] += 1;
        }
        let mut worst: Vec<usize> = (0..npts).collect();
        worst.sort_by(|&a, &b| found[b].1.total_cmp(&found[a].1).then(a.cmp(&b)));
        let mut next_worst = worst.into_iter();
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mean = sums.column(j) / count as f64;
                centroids.column_mut(j).copy_from(&mean);
            } else if let Some(i) = next_worst.next() {
                centroids.column_mut(j).copy_from(&x.column(i));
            }
        }
    }
    Ok((centroids, trace))
}

/// Seeding on the sphere: each new atom is a normalized patch drawn with
/// probability proportional to its residual energy after one-atom coding.
fn sphere_seeding(
    x: &DMatrix<f64>,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>, DictLearnError> {
    let usable = nonzero_columns(x);
    if usable.len() < d {
        return Err(DictLearnError::InsufficientPatches {
            needed: d,
            found: usable.len(),
        });
    }
    let npts = x.ncols();
    let mut atoms = DMatrix::zeros(x.nrows(), d);
    let first = usable[rng.gen_range(0..usable.len())];
    atoms
        .column_mut(0)
        .copy_from(&normalized(x.column(first).clone_owned()));
    let mut best_corr = vec![0.0f64; npts];
    let norms: Vec<f64> = (0..npts).map(|i| x.column(i).norm_squared()).collect();
    for j in 0..d {
        if j > 0 {
            let energy: Vec<f64> = (0..npts)
                .map(|i| (norms[i] - best_corr[i]).max(0.0))
                .collect();
            let pick = weighted_pick(&energy, rng)
                .unwrap_or_else(|| usable[rng.gen_range(0..usable.len())]);
            atoms
                .column_mut(j)
                .copy_from(&normalized(x.column(pick).clone_owned()));
        }
        let a = atoms.column(j).clone_owned();
        best_corr.par_iter_mut().enumerate().for_each(|(i, b)| {
            let c = a.dot(&x.column(i));
            *b = b.max(c * c);
        });
    }
    Ok(atoms)
}

/// One-atom assignment `argmax_j |d_j . x|` of every column of `x`, with
/// the correlation. Ties go to the lowest index.
pub fn gsvq_assign(atoms: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<(usize, f64)> {
    let corr = atoms.tr_mul(x);
    (0..x.ncols())
        .map(|i| {
            let col = corr.column(i);
            let mut best = (0, col[0]);
            for (j, &c) in col.iter().enumerate().skip(1) {
                if c.abs() > best.1.abs() {
                    best = (j, c);
                }
            }
            best
        })
        .collect()
}

/// Dominant eigenvector of `sum_i x_i x_i^T` over `members`, by power
/// iteration started at `start`; the sign follows `start`.
fn dominant_direction(x: &DMatrix<f64>, members: &[usize], start: &DVector<f64>) -> DVector<f64> {
    let sub = DMatrix::from_columns(&members.iter().map(|&i| x.column(i)).collect::<Vec<_>>());
    let mut v = start.clone();
    for _ in 0..POWER_MAX_ITERS {
        let next = &sub * sub.tr_mul(&v);
        let norm = next.norm();
        if norm == 0.0 {
            break;
        }
        let next = next / norm;
        let diff = (&next - &v).norm();
        v = next;
        if diff < POWER_TOL {
            break;
        }
    }
    if v.dot(start) < 0.0 {
        v = -v;
    }
    v
}

/// One GSVQ sweep: assign, then move every atom to the dominant direction
/// of its members. Returns the residual energy before the update and the
/// assignment.
fn gsvq_step(x: &DMatrix<f64>, atoms: &mut DMatrix<f64>) -> (f64, Vec<usize>) {
    let assigned = gsvq_assign(atoms, x);
    let energy: f64 = assigned
        .iter()
        .enumerate()
        .map(|(i, &(_, c))| (x.column(i).norm_squared() - c * c).max(0.0))
        .sum();
    let d = atoms.ncols();
    let mut members = vec![Vec::new(); d];
    for (i, &(j, _)) in assigned.iter().enumerate() {
        members[j].push(i);
    }
    let updated: Vec<Option<DVector<f64>>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mine: Vec<usize> = members[j]
                .iter()
                .copied()
                .filter(|&i| x.column(i).norm() > 0.0)
                .collect();
            (!mine.is_empty()).then(|| dominant_direction(x, &mine, &atoms.column(j).clone_owned()))
        })
        .collect();
    // worst-fit patches for dead atoms, highest residual first
    let mut worst: Vec<(usize, f64)> = assigned
        .iter()
        .enumerate()
        .map(|(i, &(_, c))| (i, x.column(i).norm_squared() - c * c))
        .filter(|&(i, _)| x.column(i).norm() > 0.0)
        .collect();
    worst.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut next_worst = worst.into_iter();
    for (j, u) in updated.into_iter().enumerate() {
        match u {
            Some(v) => atoms.column_mut(j).copy_from(&v),
            None => {
                if let Some((i, _)) = next_worst.next() {
                    atoms
                        .column_mut(j)
                        .copy_from(&normalized(x.column(i).clone_owned()));
                }
            }
        }
    }
    (energy, assigned.into_iter().map(|a| a.0).collect())
}

/// Gain-shape VQ from the given unit-norm start.
pub(crate) fn gsvq(
    x: &DMatrix<f64>,
    mut atoms: DMatrix<f64>,
    max_iters: usize,
) -> (DMatrix<f64>, Vec<f64>) {
    let mut trace = Vec::new();
    let mut prev_assign: Vec<usize> = Vec::new();
    for _ in 0..max_iters {
        let before = atoms.clone();
        let (energy, assign) = gsvq_step(x, &mut atoms);
        trace.push(energy);
        let moved = (&atoms - &before).amax();
        if assign == prev_assign && moved < GSVQ_CONVERGED {
            break;
        }
        prev_assign = assign;
    }
    (atoms, trace)
}

fn code_one(
    dict: &Dictionary,
    x: &[f64],
    cfg: &DictLearnConfig,
) -> Result<DVector<f64>, SparseError> {
    Ok(match cfg.method {
        DictMethod::Sc => sparse::lasso_lars(dict, x, cfg.lambda, None)?.weights,
        _ => sparse::omp(dict, x, cfg.gamma, None)?.weights,
    })
}

fn code_objective(dict: &Dictionary, x: &[f64], w: &DVector<f64>, cfg: &DictLearnConfig) -> f64 {
    match cfg.method {
        DictMethod::Sc => sparse::lasso_objective(dict, x, w, cfg.lambda, None),
        _ => sparse::masked_residual_sq(dict, x, w, None),
    }
}

/// Online dictionary learning with sufficient statistics `A = sum w w^T`,
/// `B = sum x w^T`, reset at the start of each epoch. With a minibatch at
/// least as large as the batch this is exact block-coordinate descent.
fn odl(
    x: &DMatrix<f64>,
    cfg: &DictLearnConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, Vec<f64>), DictLearnError> {
    let (n, d) = (x.nrows(), cfg.atoms);
    let mut atoms = random_patches(x, d, rng)?;
    for mut c in atoms.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    let npts = x.ncols();
    let mut order: Vec<usize> = (0..npts).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        if cfg.minibatch < npts {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        }
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut b = DMatrix::<f64>::zeros(n, d);
        let mut epoch_obj = 0.0;
        for chunk in order.chunks(cfg.minibatch) {
            let dict = Dictionary::new(atoms.clone())?;
            let codes: Vec<(DVector<f64>, f64)> = chunk
                .par_iter()
                .map(|&i| {
                    let xi = x.column(i);
                    let w = code_one(&dict, xi.as_slice(), cfg)?;
                    let obj = code_objective(&dict, xi.as_slice(), &w, cfg);
                    Ok((w, obj))
                })
                .collect::<Result<_, SparseError>>()?;
            let mut w_mat = DMatrix::zeros(d, chunk.len());
            let mut x_mat = DMatrix::zeros(n, chunk.len());
            for (k, (&i, (w, obj))) in chunk.iter().zip(&codes).enumerate() {
                w_mat.column_mut(k).copy_from(w);
                x_mat.column_mut(k).copy_from(&x.column(i));
                epoch_obj += obj;
            }
            a.gemm(1.0, &w_mat, &w_mat.transpose(), 1.0);
            b.gemm(1.0, &x_mat, &w_mat.transpose(), 1.0);

            // worst-reconstructed patches of this minibatch, for dead atoms
            let residual = &x_mat - &atoms * &w_mat;
            let mut worst: Vec<(usize, f64)> = residual
                .column_iter()
                .enumerate()
                .map(|(k, r)| (k, r.norm_squared()))
                .filter(|&(k, _)| x_mat.column(k).norm() > 0.0)
                .collect();
            worst.sort_by(|p, q| q.1.total_cmp(&p.1).then(p.0.cmp(&q.0)));
            let mut next_worst = worst.into_iter();

            update_atoms(&mut atoms, &a, &b, || {
                next_worst
                    .next()
                    .map(|(k, _)| x_mat.column(k).clone_owned())
            });
        }
        trace.push(epoch_obj);
    }
    Ok((atoms, trace))
}

/// One block-coordinate pass: `d_j = normalize(b_j - D a_j + A_jj d_j)`,
/// the exact minimizer over the unit sphere with the other atoms fixed.
fn update_atoms(
    atoms: &mut DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mut replacement: impl FnMut() -> Option<DVector<f64>>,
) {
    for j in 0..atoms.ncols() {
        let mut u = b.column(j) - &*atoms * a.column(j);
        u.axpy(a[(j, j)], &atoms.column(j), 1.0);
        let norm = u.norm();
        let dead = a[(j, j)] == 0.0 || norm.is_nan() || norm <= 1e-12;
        if !dead {
            atoms.column_mut(j).copy_from(&(u / norm));
        } else if let Some(p) = replacement() {
            atoms.column_mut(j).copy_from(&normalized(p));
        }
    }
}
