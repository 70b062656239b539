//! Crop encoding: convolutional patch codes pooled over four quadrants.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{extract_patch, PATCH_LEN, PATCH_SIDE};
use crate::imageproc::{RectCrop, CROP_SIZE};
use crate::sparse::{self, Dictionary, MaskVec, SparseError};
use crate::whitening::{standardize, Whitener};

/// Patch positions per crop side at stride one.
pub const PATCHES_PER_SIDE: usize = CROP_SIZE - PATCH_SIDE + 1;
pub const PATCHES_PER_CROP: usize = PATCHES_PER_SIDE * PATCHES_PER_SIDE;
pub const QUADRANTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("encoder {0} needs raw centroids, but the codebook has none")]
    MissingCentroids(EncoderKind),
    #[error("whitener dimension {found} does not match patch length {expected}")]
    WhitenerMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Sc,
    Msc,
    Omp,
    Momp,
    St,
    KmeansTri,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 6] = [
        Self::Sc,
        Self::Msc,
        Self::Omp,
        Self::Momp,
        Self::St,
        Self::KmeansTri,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sc => "sc",
            Self::Msc => "msc",
            Self::Omp => "omp",
            Self::Momp => "momp",
            Self::St => "st",
            Self::KmeansTri => "kmeanstri",
        }
    }

    /// Default cross-validation grid for the sparsity parameter.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::Sc | Self::St => vec![0.5, 1.0, 1.5, 2.0],
            Self::Msc => vec![1.0, 2.0, 3.0, 4.0],
            Self::Omp | Self::Momp => vec![1.0, 5.0, 10.0, 15.0],
            Self::KmeansTri => vec![0.0],
        }
    }

    pub fn polarity_split(self) -> bool {
        self != Self::KmeansTri
    }

    pub fn uses_mask(self) -> bool {
        matches!(self, Self::Msc | Self::Momp)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| {
                k.name().eq_ignore_ascii_case(s)
                    || (s.eq_ignore_ascii_case("kmeans-tri") && *k == Self::KmeansTri)
            })
            .ok_or_else(|| {
                format!("unknown encoder '{s}' (expected sc, msc, omp, momp, st, kmeanstri)")
            })
    }
}

/// Encoder kind plus its sparsity parameter: lambda for SC/mSC, gamma for
/// OMP/mOMP, tau for ST; unused for KMeans-Tri.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub sparsity: f64,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, sparsity: f64) -> Self {
        Self { kind, sparsity }
    }

    pub fn polarity_split(&self) -> bool {
        self.kind.polarity_split()
    }

    fn gamma(&self) -> usize {
        self.sparsity.round().max(1.0) as usize
    }

    /// Length of the pooled feature vector for a dictionary of `d` atoms.
    pub fn feature_len(&self, d: usize) -> usize {
        QUADRANTS * self.code_len(d)
    }

    pub fn code_len(&self, d: usize) -> usize {
        if self.polarity_split() {
            2 * d
        } else {
            d
        }
    }
}

impl fmt::Display for EncoderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EncoderKind::KmeansTri => write!(f, "kmeanstri"),
            k => write!(f, "{k}({})", self.sparsity),
        }
    }
}

/// A dictionary plus, for k-means learners, the raw (unnormalized) centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub dictionary: Dictionary,
    pub centroids: Option<DMatrix<f64>>,
}

impl Codebook {
    pub fn new(dictionary: Dictionary) -> Self {
        Self {
            dictionary,
            centroids: None,
        }
    }

    pub fn atoms(&self) -> usize {
        self.dictionary.len()
    }
}

/// Pooled descriptor of one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Encode one standardized, whitened patch. `mask` is the validity pattern
/// before whitening; fully masked patches encode to zero.
pub fn encode_patch(
    book: &Codebook,
    patch: &[f64],
    mask: &[bool],
    cfg: &EncoderConfig,
) -> Result<DVector<f64>, FeatureError> {
    let d = book.atoms();
    let mut out = DVector::zeros(cfg.code_len(d));
    if !mask.iter().any(|&m| m) {
        return Ok(out);
    }
    let dict = &book.dictionary;
    let w = match cfg.kind {
        EncoderKind::Sc => sparse::lasso_lars(dict, patch, cfg.sparsity, None)?.weights,
        EncoderKind::Msc => {
            let m = MaskVec::new(mask.to_vec());
            sparse::lasso_lars(dict, patch, cfg.sparsity, Some(&m))?.weights
        }
        EncoderKind::Omp => sparse::omp(dict, patch, cfg.gamma().min(d), None)?.weights,
        EncoderKind::Momp => {
            let m = MaskVec::new(mask.to_vec());
            sparse::omp(dict, patch, cfg.gamma().min(d), Some(&m))?.weights
        }
        EncoderKind::St => sparse::soft_threshold(dict, patch, cfg.sparsity)?.weights,
        EncoderKind::KmeansTri => {
            let c = book
                .centroids
                .as_ref()
                .ok_or(FeatureError::MissingCentroids(cfg.kind))?;
            return Ok(sparse::kmeans_tri(c, patch)?);
        }
    };
    polarity_split_into(&w, &mut out);
    Ok(out)
}

/// `f_j = max(w_j, 0)`, `f_{j+d} = max(-w_j, 0)`.
pub fn polarity_split(w: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(2 * w.len());
    polarity_split_into(w, &mut out);
    out
}

fn polarity_split_into(w: &DVector<f64>, out: &mut DVector<f64>) {
    let d = w.len();
    for (j, &v) in w.iter().enumerate() {
        out[j] = v.max(0.0);
        out[j + d] = (-v).max(0.0);
    }
}

/// Quadrant (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right) of the
/// patch with top-left corner `(row, col)`, by its center pixel.
pub fn quadrant_of(row: usize, col: usize) -> usize {
    let half = CROP_SIZE as f64 / 2.0;
    let centre = (PATCH_SIDE as f64 - 1.0) / 2.0;
    let bottom = row as f64 + centre >= half;
    let right = col as f64 + centre >= half;
    2 * bottom as usize + right as usize
}

/// All stride-one patches of a crop, standardized, as columns of a
/// `288 x 361` matrix, plus their masks.
pub fn crop_patches(crop: &RectCrop) -> (DMatrix<f64>, Vec<Vec<bool>>) {
    let img = crop.image();
    let mut data = DMatrix::zeros(PATCH_LEN, PATCHES_PER_CROP);
    let mut masks = Vec::with_capacity(PATCHES_PER_CROP);
    let mut mask = vec![false; PATCH_LEN];
    for (k, mut col) in data.column_iter_mut().enumerate() {
        let (r, c) = (k / PATCHES_PER_SIDE, k % PATCHES_PER_SIDE);
        extract_patch(img, r, c, col.as_mut_slice(), &mut mask);
        standardize(col.as_mut_slice(), &mask);
        masks.push(mask.clone());
    }
    (data, masks)
}

/// Pooled feature vector of a crop.
pub fn extract_features(
    crop: &RectCrop,
    book: &Codebook,
    wh: &Whitener,
    cfg: &EncoderConfig,
) -> Result<FeatureVector, FeatureError> {
    if wh.dim() != PATCH_LEN {
        return Err(FeatureError::WhitenerMismatch {
            expected: PATCH_LEN,
            found: wh.dim(),
        });
    }
    let (data, masks) = crop_patches(crop);
    let white = wh.apply_columns(&data);
    let codes: Vec<DVector<f64>> = (0..PATCHES_PER_CROP)
        .into_par_iter()
        .map(|k| encode_patch(book, white.column(k).as_slice(), &masks[k], cfg))
        .collect::<Result<_, _>>()?;
    Ok(pool(&codes, cfg.code_len(book.atoms())))
}

/// Sum codes per quadrant in patch index order and concatenate the quadrants.
pub fn pool(codes: &[DVector<f64>], code_len: usize) -> FeatureVector {
    let mut values = vec![0.0; QUADRANTS * code_len];
    for (k, code) in codes.iter().enumerate() {
        let q = quadrant_of(k / PATCHES_PER_SIDE, k % PATCHES_PER_SIDE);
        let block = &mut values[q * code_len..(q + 1) * code_len];
        for (acc, v) in block.iter_mut().zip(code.iter()) {
            *acc += v;
        }
    }
    FeatureVector { values }
}
