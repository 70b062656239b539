//! Training, recognition cross-validation and grid-search detection.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{
    make_splits, sample_patches, split_groups, DatasetError, PatchBatch, Scene, SplitMode,
    PATCH_LEN,
};
use crate::dictlearn::{
    learn_dictionary, natural_encoder_for, DictLearnConfig, DictLearnError, DictMethod, Learned,
    OMP_GAMMA_GRID, SC_LAMBDA_GRID,
};
use crate::features::{
    extract_features, Codebook, EncoderConfig, EncoderKind, FeatureError, FeatureVector,
};
use crate::geometry::{rectangle_metric, GeometryError, GraspRect};
use crate::imageproc::{
    derive_channels, extract_rect_crop, object_region, ImageError, MultiChannelImage, PixelBox,
    RansacParams, RectCrop,
};
use crate::model::{train_svm_with, LbfgsParams, LinearModel, ModelError, C_GRID};
use crate::whitening::{
    fit_whitener, standardize_batch, whiten_batch, Whitener, WhiteningError, DEFAULT_EPSILON,
};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_PATCHES: usize = 100_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Whitening(#[from] WhiteningError),
    #[error(transparent)]
    DictLearn(#[from] DictLearnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no grasp candidates: {0}")]
    NoCandidates(String),
    #[error("not enough data: {0}")]
    Insufficient(String),
}

/// A scene together with its derived 8-channel image.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: Scene,
    pub image: MultiChannelImage,
}

impl Borrow<Scene> for PreparedScene {
    fn borrow(&self) -> &Scene {
        &self.scene
    }
}

pub fn prepare_scenes(scenes: Vec<Scene>) -> Vec<PreparedScene> {
    scenes
        .into_par_iter()
        .map(|scene| {
            let image = derive_channels(&scene);
            PreparedScene { scene, image }
        })
        .collect()
}

/// A labeled rectangle crop and the index of its scene.
#[derive(Debug, Clone)]
pub struct LabeledCrop {
    pub scene: usize,
    pub label: i8,
    pub crop: RectCrop,
}

/// Crops of every labeled rectangle; rectangles that cannot be cropped are
/// skipped with a warning.
pub fn labeled_crops<S: Borrow<PreparedScene> + Sync>(scenes: &[S]) -> Vec<LabeledCrop> {
    let per_scene: Vec<Vec<LabeledCrop>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let s = s.borrow();
            s.scene
                .labeled_rects()
                .filter_map(|(r, label)| match extract_rect_crop(&s.image, &r) {
                    Ok(crop) => Some(LabeledCrop {
                        scene: i,
                        label,
                        crop,
                    }),
                    Err(e) => {
                        log::warn!("{}: rectangle skipped: {e}", s.scene.id);
                        None
                    }
                })
                .collect()
        })
        .collect();
    per_scene.into_iter().flatten().collect()
}

/// Patch sampling and whitening settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontEndConfig {
    pub patches: usize,
    pub whitening: bool,
    pub epsilon: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            patches: DEFAULT_PATCHES,
            whitening: true,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Deterministic seed for a sub-task.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z =
        seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_PATCHES: u64 = 1;
const TAG_DICT: u64 = 2;
const TAG_INNER: u64 = 3;

/// Sample, standardize and whiten patches from `sources` (plus an equal
/// number from `aux`). Without whitening the identity transform is used.
pub fn whitened_patches(
    sources: &[MultiChannelImage],
    aux: Option<&[MultiChannelImage]>,
    fe: &FrontEndConfig,
    seed: u64,
) -> Result<(Whitener, PatchBatch), EvalError> {
    let mut batch = sample_patches(sources, fe.patches, seed, aux)?;
    standardize_batch(&mut batch);
    let wh = if fe.whitening {
        fit_whitener(&batch, fe.epsilon)?
    } else {
        Whitener::identity(PATCH_LEN)
    };
    whiten_batch(&wh, &mut batch);
    Ok((wh, batch))
}

/// Everything needed to score a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub codebook: Codebook,
    pub whitener: Whitener,
    pub encoder: EncoderConfig,
    pub model: LinearModel,
}

impl Pipeline {
    pub fn features(&self, crop: &RectCrop) -> Result<FeatureVector, FeatureError> {
        extract_features(crop, &self.codebook, &self.whitener, &self.encoder)
    }

    pub fn score_rect(&self, img: &MultiChannelImage, rect: &GraspRect) -> Result<f64, EvalError> {
        let crop = extract_rect_crop(img, rect)?;
        Ok(self.model.score(&self.features(&crop)?)?)
    }
}

/// Settings for training a single pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dict: DictLearnConfig,
    pub encoder: EncoderConfig,
    pub c: f64,
    pub front_end: FrontEndConfig,
    pub lbfgs: LbfgsParams,
}

fn features_of(
    crops: &[&LabeledCrop],
    book: &Codebook,
    wh: &Whitener,
    enc: &EncoderConfig,
) -> Result<Vec<FeatureVector>, EvalError> {
    Ok(crops
        .par_iter()
        .map(|c| extract_features(&c.crop, book, wh, enc))
        .collect::<Result<Vec<_>, _>>()?)
}

fn train_model(
    feats: &[&FeatureVector],
    labels: &[i8],
    c: f64,
    lbfgs: &LbfgsParams,
) -> Result<LinearModel, EvalError> {
    let slices: Vec<&[f64]> = feats.iter().map(|f| f.values.as_slice()).collect();
    Ok(train_svm_with(&slices, labels, c, lbfgs)?.0)
}

fn aux_images(aux: Option<&[PreparedScene]>) -> Option<Vec<MultiChannelImage>> {
    aux.filter(|a| !a.is_empty())
        .map(|a| a.iter().map(|s| s.image.clone()).collect())
}

/// Whitener and dictionary fit on patches of the labeled-rectangle crops of
/// `train` (plus an equal share from `aux`). The crops are returned too.
pub fn fit_codebook<S: Borrow<PreparedScene> + Sync>(
    train: &[S],
    aux: Option<&[PreparedScene]>,
    fe: &FrontEndConfig,
    dict: &DictLearnConfig,
) -> Result<(Whitener, Learned, Vec<LabeledCrop>), EvalError> {
    let crops = labeled_crops(train);
    if crops.is_empty() {
        return Err(EvalError::Insufficient(
            "no labeled rectangles to train on".into(),
        ));
    }
    let sources: Vec<MultiChannelImage> = crops.iter().map(|c| c.crop.image().clone()).collect();
    let aux = aux_images(aux);
    let (whitener, batch) = whitened_patches(
        &sources,
        aux.as_deref(),
        fe,
        derive_seed(dict.seed, TAG_PATCHES, 0),
    )?;
    let learned = learn_dictionary(&batch, dict)?;
    Ok((whitener, learned, crops))
}

/// Fit whitener, dictionary and SVM on the labeled rectangles of `train`.
pub fn train_pipeline<S: Borrow<PreparedScene> + Sync>(
    train: &[S],
    aux: Option<&[PreparedScene]>,
    cfg: &TrainConfig,
) -> Result<Pipeline, EvalError> {
    let (whitener, learned, crops) = fit_codebook(train, aux, &cfg.front_end, &cfg.dict)?;
    let codebook = learned.codebook;
    let refs: Vec<&LabeledCrop> = crops.iter().collect();
    let feats = features_of(&refs, &codebook, &whitener, &cfg.encoder)?;
    let labels: Vec<i8> = crops.iter().map(|c| c.label).collect();
    let model = train_model(
        &feats.iter().collect::<Vec<_>>(),
        &labels,
        cfg.c,
        &cfg.lbfgs,
    )?;
    Ok(Pipeline {
        codebook,
        whitener,
        encoder: cfg.encoder,
        model,
    })
}

/// Encoder used in an experiment: the learner's natural one or a fixed kind
/// whose sparsity is cross-validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum EncoderChoice {
    Natural,
    Fixed(EncoderKind),
}

impl fmt::Display for EncoderChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Natural => f.write_str("natural"),
            Self::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for EncoderChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("natural") {
            Ok(Self::Natural)
        } else {
            s.parse().map(Self::Fixed)
        }
    }
}

impl From<EncoderChoice> for String {
    fn from(c: EncoderChoice) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for EncoderChoice {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// One cross-validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dict: DictLearnConfig,
    pub encoder: EncoderChoice,
    /// Overrides the default sparsity grid of the encoder.
    pub sparsity_grid: Option<Vec<f64>>,
    pub c_grid: Vec<f64>,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub seed: u64,
    pub front_end: FrontEndConfig,
    pub lbfgs: LbfgsParams,
}

impl ExperimentConfig {
    pub fn new(dict: DictLearnConfig, encoder: EncoderChoice) -> Self {
        Self {
            dict,
            encoder,
            sparsity_grid: None,
            c_grid: C_GRID.to_vec(),
            outer_folds: DEFAULT_FOLDS,
            inner_folds: DEFAULT_FOLDS,
            seed: dict.seed,
            front_end: FrontEndConfig::default(),
            lbfgs: LbfgsParams::default(),
        }
    }

    /// `(sparsity, dictionary config, encoder)` candidates, ascending in sparsity.
    /// A natural SC/OMP encoder ties the dictionary's sparsity to the encoder's.
    pub fn candidates(&self) -> Vec<(f64, DictLearnConfig, EncoderConfig)> {
        let mut out: Vec<(f64, DictLearnConfig, EncoderConfig)> = match self.encoder {
            EncoderChoice::Natural => match self.dict.method {
                DictMethod::Sc => {
                    let grid = self
                        .sparsity_grid
                        .clone()
                        .unwrap_or(SC_LAMBDA_GRID.to_vec());
                    grid.into_iter()
                        .map(|l| {
                            let mut d = self.dict;
                            d.lambda = l;
                            (l, d, natural_encoder_for(&d))
                        })
                        .collect()
                }
                DictMethod::Omp => {
                    let grid = self
                        .sparsity_grid
                        .clone()
                        .unwrap_or(OMP_GAMMA_GRID.iter().map(|&g| g as f64).collect());
                    grid.into_iter()
                        .map(|g| {
                            let mut d = self.dict;
                            d.gamma = (g.round().max(1.0) as usize).min(d.atoms);
                            (g, d, natural_encoder_for(&d))
                        })
                        .collect()
                }
                _ => {
                    let enc = natural_encoder_for(&self.dict);
                    vec![(enc.sparsity, self.dict, enc)]
                }
            },
            EncoderChoice::Fixed(kind) => {
                let grid = self.sparsity_grid.clone().unwrap_or(kind.default_grid());
                grid.into_iter()
                    .map(|s| (s, self.dict, EncoderConfig::new(kind, s)))
                    .collect()
            }
        };
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.dedup_by(|a, b| a.0 == b.0);
        out
    }
}

/// Outcome of one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub sparsity: f64,
    pub c: f64,
    pub inner_accuracy: f64,
    pub accuracy: f64,
    pub test_examples: usize,
    /// SHA-256 over the ids of the scenes the artifacts were fit on.
    pub train_hash: String,
    pub train_scenes: Vec<String>,
    pub test_scenes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub dict: DictMethod,
    pub encoder: EncoderChoice,
    pub folds: Vec<FoldOutcome>,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn ids_hash<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut sorted: Vec<&str> = ids.into_iter().collect();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for id in sorted {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_pixels(h: &mut Sha256, s: &Scene) {
    h.update((s.height() as u64).to_le_bytes());
    h.update((s.width() as u64).to_le_bytes());
    h.update(s.rgb());
    for p in s.cloud.points() {
        match p {
            Some(p) => {
                h.update([1]);
                for v in p {
                    h.update(v.to_le_bytes());
                }
            }
            None => h.update([0]),
        }
    }
}

/// Hash of the inputs of channel derivation: image size, RGB and point cloud.
pub fn pixels_hash(scene: &Scene) -> String {
    let mut h = Sha256::new();
    hash_pixels(&mut h, scene);
    hex(&h.finalize())
}

/// Content hash of a dataset: ids, images, point clouds and rectangles.
pub fn dataset_hash<S: Borrow<Scene>>(scenes: &[S]) -> String {
    let mut h = Sha256::new();
    let mut sorted: Vec<&Scene> = scenes.iter().map(|s| s.borrow()).collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for s in sorted {
        h.update((s.id.len() as u64).to_le_bytes());
        h.update(s.id.as_bytes());
        h.update(s.object_id.to_le_bytes());
        hash_pixels(&mut h, s);
        for (r, label) in s.labeled_rects() {
            h.update([label as u8]);
            for v in [r.x, r.y, r.theta, r.w, r.h] {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

fn accuracy(
    model: &LinearModel,
    feats: &[&FeatureVector],
    labels: &[i8],
) -> Result<f64, EvalError> {
    let mut correct = 0;
    for (f, &y) in feats.iter().zip(labels) {
        if model.predict(f)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / feats.len() as f64)
}

/// Nested cross-validation of rectangle recognition.
///
/// Outer folds group rectangles by scene. Per outer fold the whitener and
/// dictionaries are fit on outer-training patches only, an inner CV over the
/// outer-training scenes picks `(sparsity, C)` and the retrained model is
/// scored on the held-out rectangles.
pub fn run_recognition_cv<S: Borrow<PreparedScene> + Sync>(
    scenes: &[S],
    aux: Option<&[PreparedScene]>,
    cfg: &ExperimentConfig,
) -> Result<RecognitionReport, EvalError> {
    if cfg.outer_folds < 2 || cfg.inner_folds < 2 {
        return Err(DatasetError::InvalidFoldCount(cfg.outer_folds.min(cfg.inner_folds)).into());
    }
    let crops = labeled_crops(scenes);
    let labeled: Vec<usize> = {
        let mut v: Vec<usize> = crops.iter().map(|c| c.scene).collect();
        v.dedup();
        v
    };
    if labeled.len() < cfg.outer_folds {
        return Err(EvalError::Insufficient(format!(
            "{} labeled scenes for {} folds",
            labeled.len(),
            cfg.outer_folds
        )));
    }
    let id = |i: usize| scenes[i].borrow().scene.id.as_str();
    let mut order = labeled.clone();
    order.sort_by(|&a, &b| id(a).cmp(id(b)));
    let groups: Vec<u64> = (0..order.len() as u64).collect();
    let outer: Vec<Vec<usize>> = split_groups(&groups, cfg.outer_folds, cfg.seed)
        .into_iter()
        .map(|f| f.into_iter().map(|k| order[k]).collect())
        .collect();
    let aux_imgs = aux_images(aux);
    let candidates = cfg.candidates();

    let mut folds = Vec::with_capacity(outer.len());
    for (fold, test_scenes) in outer.iter().enumerate() {
        let is_test = |s: usize| test_scenes.contains(&s);
        let train: Vec<&LabeledCrop> = crops.iter().filter(|c| !is_test(c.scene)).collect();
        let test: Vec<&LabeledCrop> = crops.iter().filter(|c| is_test(c.scene)).collect();
        let mut train_ids: Vec<String> = order
            .iter()
            .filter(|&&s| !is_test(s))
            .map(|&s| id(s).to_string())
            .collect();
        train_ids.sort();
        let mut test_ids: Vec<String> = test_scenes.iter().map(|&s| id(s).to_string()).collect();
        test_ids.sort();

        let sources: Vec<MultiChannelImage> =
            train.iter().map(|c| c.crop.image().clone()).collect();
        let fold_seed = derive_seed(cfg.seed, TAG_PATCHES, fold as u64);
        let (wh, batch) =
            whitened_patches(&sources, aux_imgs.as_deref(), &cfg.front_end, fold_seed)?;

        // one dictionary per distinct learner config
        let mut books: Vec<(DictLearnConfig, Codebook)> = Vec::new();
        for (_, dcfg, _) in &candidates {
            if books.iter().any(|(d, _)| d == dcfg) {
                continue;
            }
            let mut seeded = *dcfg;
            seeded.seed = derive_seed(dcfg.seed, TAG_DICT, fold as u64);
            books.push((*dcfg, learn_dictionary(&batch, &seeded)?.codebook));
        }
        let book_for =
            |d: &DictLearnConfig| &books.iter().find(|(b, _)| b == d).expect("learned above").1;

        let train_labels: Vec<i8> = train.iter().map(|c| c.label).collect();
        let test_labels: Vec<i8> = test.iter().map(|c| c.label).collect();
        let mut feats: Vec<(Vec<FeatureVector>, Vec<FeatureVector>)> =
            Vec::with_capacity(candidates.len());
        for (_, dcfg, enc) in &candidates {
            let book = book_for(dcfg);
            feats.push((
                features_of(&train, book, &wh, enc)?,
                features_of(&test, book, &wh, enc)?,
            ));
        }

        // inner folds over the training scenes
        let mut train_scene_list: Vec<usize> =
            order.iter().copied().filter(|&s| !is_test(s)).collect();
        train_scene_list.sort_by(|&a, &b| id(a).cmp(id(b)));
        let inner_k = cfg.inner_folds.min(train_scene_list.len());
        if inner_k < 2 {
            return Err(EvalError::Insufficient(
                "too few training scenes for inner folds".into(),
            ));
        }
        let inner_groups: Vec<u64> = (0..train_scene_list.len() as u64).collect();
        let inner: Vec<Vec<usize>> = split_groups(
            &inner_groups,
            inner_k,
            derive_seed(cfg.seed, TAG_INNER, fold as u64),
        )
        .into_iter()
        .map(|f| f.into_iter().map(|k| train_scene_list[k]).collect())
        .collect();

        let mut best: Option<(f64, usize, f64)> = None;
        for (ci, (train_feats, _)) in feats.iter().enumerate() {
            let mut c_sorted = cfg.c_grid.clone();
            c_sorted.sort_by(f64::total_cmp);
            for &c in &c_sorted {
                let mut accs = Vec::new();
                for held in &inner {
                    let (mut fi, mut yi, mut ft, mut yt) =
                        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                    for (k, crop) in train.iter().enumerate() {
                        if held.contains(&crop.scene) {
                            ft.push(&train_feats[k]);
                            yt.push(crop.label);
                        } else {
                            fi.push(&train_feats[k]);
                            yi.push(crop.label);
                        }
                    }
                    if ft.is_empty() {
                        continue;
                    }
                    let model = train_model(&fi, &yi, c, &cfg.lbfgs)?;
                    accs.push(accuracy(&model, &ft, &yt)?);
                }
                let mean = mean_std(&accs).0;
                if best.is_none_or(|(b, _, _)| mean > b) {
                    best = Some((mean, ci, c));
                }
            }
        }
        let (inner_accuracy, ci, c) =
            best.ok_or_else(|| EvalError::Insufficient("empty hyperparameter grid".into()))?;
        let (train_feats, test_feats) = &feats[ci];
        let model = train_model(
            &train_feats.iter().collect::<Vec<_>>(),
            &train_labels,
            c,
            &cfg.lbfgs,
        )?;
        let acc = accuracy(&model, &test_feats.iter().collect::<Vec<_>>(), &test_labels)?;
        log::info!(
            "{} / {}: fold {fold}: sparsity {} C {c}: accuracy {acc:.4}",
            cfg.dict.method,
            cfg.encoder,
            candidates[ci].0
        );
        folds.push(FoldOutcome {
            fold,
            sparsity: candidates[ci].0,
            c,
            inner_accuracy,
            accuracy: acc,
            test_examples: test.len(),
            train_hash: ids_hash(train_ids.iter().map(String::as_str)),
            train_scenes: train_ids,
            test_scenes: test_ids,
        });
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    Ok(RecognitionReport {
        dict: cfg.dict.method,
        encoder: cfg.encoder,
        folds,
        mean,
        std,
    })
}

/// Most frequent value; ties go to the smallest.
pub fn mode_smallest(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if best.is_none_or(|(_, n)| j - i > n) {
            best = Some((sorted[i], j - i));
        }
        i = j;
    }
    best.map(|b| b.0)
}

/// Most often selected `(sparsity, C)` over the outer folds.
pub fn modal_hyperparams(report: &RecognitionReport) -> (f64, f64) {
    let s: Vec<f64> = report.folds.iter().map(|f| f.sparsity).collect();
    let c: Vec<f64> = report.folds.iter().map(|f| f.c).collect();
    (
        mode_smallest(&s).unwrap_or(f64::NAN),
        mode_smallest(&c).unwrap_or(f64::NAN),
    )
}

/// Rectangle grid for detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchSpec {
    pub stride: usize,
    pub widths: Vec<f64>,
    pub heights: Vec<f64>,
    pub angles: Vec<f64>,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        let sizes: Vec<f64> = (1..=9).map(|k| 10.0 * k as f64).collect();
        Self {
            stride: 10,
            widths: sizes.clone(),
            heights: sizes,
            angles: (0..12).map(|k| 15.0 * k as f64).collect(),
        }
    }
}

impl GridSearchSpec {
    fn centres(&self, lo: usize, hi: usize) -> impl Iterator<Item = usize> {
        (lo..=hi).step_by(self.stride.max(1))
    }

    pub fn candidate_count(&self, region: &PixelBox) -> usize {
        let nx = (region.x_max - region.x_min) / self.stride.max(1) + 1;
        let ny = (region.y_max - region.y_min) / self.stride.max(1) + 1;
        nx * ny * self.widths.len() * self.heights.len() * self.angles.len()
    }

    fn min_size(&self) -> f64 {
        self.widths
            .iter()
            .chain(&self.heights)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// All candidates in enumeration order: centers row-major, then width,
/// height and angle ascending (in the order listed by the spec).
pub fn enumerate_candidates(
    region: &PixelBox,
    spec: &GridSearchSpec,
) -> Result<Vec<GraspRect>, EvalError> {
    let mut out = Vec::with_capacity(spec.candidate_count(region));
    for y in spec.centres(region.y_min, region.y_max) {
        for x in spec.centres(region.x_min, region.x_max) {
            for &w in &spec.widths {
                for &h in &spec.heights {
                    for &t in &spec.angles {
                        out.push(GraspRect::new(x as f64, y as f64, t, w, h)?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Best-scoring rectangle of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub rect: GraspRect,
    pub score: f64,
    pub region: PixelBox,
    pub candidates: usize,
}

/// Index of the first maximum.
fn first_argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Score every candidate of `spec` inside the object region and return the best.
pub fn detect_best_grasp(
    scene: &PreparedScene,
    pipeline: &Pipeline,
    spec: &GridSearchSpec,
    ransac: &RansacParams,
) -> Result<Detection, EvalError> {
    let region = object_region(&scene.image, &scene.scene.cloud, ransac)?;
    detect_in_region(&scene.image, region, pipeline, spec)
}

pub fn detect_in_region(
    img: &MultiChannelImage,
    region: PixelBox,
    pipeline: &Pipeline,
    spec: &GridSearchSpec,
) -> Result<Detection, EvalError> {
    let min = spec.min_size();
    if (region.width() as f64) < min && (region.height() as f64) < min {
        return Err(EvalError::NoCandidates(format!(
            "object region {}x{} is smaller than the smallest rectangle side {min}",
            region.width(),
            region.height()
        )));
    }
    let cands = enumerate_candidates(&region, spec)?;
    let scores: Vec<f64> = cands
        .par_iter()
        .map(|r| pipeline.score_rect(img, r))
        .collect::<Result<_, _>>()?;
    let best = first_argmax(&scores).ok_or_else(|| EvalError::NoCandidates("empty grid".into()))?;
    Ok(Detection {
        rect: cands[best],
        score: scores[best],
        region,
        candidates: cands.len(),
    })
}

/// Something that proposes one grasp per scene.
pub trait Detector: Sync {
    fn detect(&self, scene: &PreparedScene) -> Result<GraspRect, EvalError>;
}

/// Builds a detector from the training scenes of a fold.
pub trait DetectorFactory: Sync {
    fn fit(
        &self,
        train: &[&PreparedScene],
        fold: usize,
    ) -> Result<Box<dyn Detector + '_>, EvalError>;
}

/// Grid search with a trained pipeline.
pub struct GridSearchDetector {
    pub pipeline: Pipeline,
    pub spec: GridSearchSpec,
    pub ransac: RansacParams,
}

impl Detector for GridSearchDetector {
    fn detect(&self, scene: &PreparedScene) -> Result<GraspRect, EvalError> {
        Ok(detect_best_grasp(scene, &self.pipeline, &self.spec, &self.ransac)?.rect)
    }
}

/// Trains a [`GridSearchDetector`] per fold.
pub struct GridSearchFactory<'a> {
    pub train: TrainConfig,
    pub aux: Option<&'a [PreparedScene]>,
    pub spec: GridSearchSpec,
    pub ransac: RansacParams,
}

impl DetectorFactory for GridSearchFactory<'_> {
    fn fit(
        &self,
        train: &[&PreparedScene],
        fold: usize,
    ) -> Result<Box<dyn Detector + '_>, EvalError> {
        let mut cfg = self.train;
        cfg.dict.seed = derive_seed(cfg.dict.seed, TAG_DICT, fold as u64);
        let pipeline = train_pipeline(train, self.aux, &cfg)?;
        Ok(Box::new(GridSearchDetector {
            pipeline,
            spec: self.spec.clone(),
            ransac: self.ransac,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub scene: String,
    pub fold: usize,
    pub rect: GraspRect,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub mode: SplitMode,
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    pub successes: usize,
    pub evaluated: usize,
    pub outcomes: Vec<SceneOutcome>,
}

/// k-fold detection evaluation. Test scenes without positive rectangles are
/// skipped; a fold's accuracy is its fraction of successful scenes.
pub fn run_detection_eval(
    scenes: &[PreparedScene],
    factory: &dyn DetectorFactory,
    mode: SplitMode,
    k: usize,
    seed: u64,
) -> Result<DetectionReport, EvalError> {
    let plan = make_splits(scenes, mode, k, seed)?;
    let fold_of = plan.fold_of(scenes);
    let mut fold_accuracy = Vec::with_capacity(k);
    let mut outcomes = Vec::new();
    for fold in 0..k {
        let train: Vec<&PreparedScene> = scenes
            .iter()
            .zip(&fold_of)
            .filter(|(_, &f)| f != fold)
            .map(|(s, _)| s)
            .collect();
        let test: Vec<&PreparedScene> = scenes
            .iter()
            .zip(&fold_of)
            .filter(|(s, &f)| f == fold && !s.scene.pos_rects.is_empty())
            .map(|(s, _)| s)
            .collect();
        if test.is_empty() {
            continue;
        }
        let detector = factory.fit(&train, fold)?;
        let results: Vec<SceneOutcome> = test
            .iter()
            .map(|s| {
                let rect = detector.detect(s)?;
                let success = rectangle_metric(&rect, &s.scene.pos_rects)?;
                log::info!(
                    "fold {fold}: {}: {}",
                    s.scene.id,
                    if success { "hit" } else { "miss" }
                );
                Ok(SceneOutcome {
                    scene: s.scene.id.clone(),
                    fold,
                    rect,
                    success,
                })
            })
            .collect::<Result<_, EvalError>>()?;
        let hits = results.iter().filter(|o| o.success).count();
        fold_accuracy.push(hits as f64 / results.len() as f64);
        outcomes.extend(results);
    }
    let successes = outcomes.iter().filter(|o| o.success).count();
    Ok(DetectionReport {
        mode,
        mean: mean_std(&fold_accuracy).0,
        fold_accuracy,
        successes,
        evaluated: outcomes.len(),
        outcomes,
    })
}

/// Per-dictionary, per-encoder cells of a recognition table.
pub type RecognitionTable = BTreeMap<(DictMethod, EncoderChoice), RecognitionReport>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes() {
        assert_eq!(mode_smallest(&[1.0, 1.0, 5.0, 10.0, 1.0]), Some(1.0));
        assert_eq!(mode_smallest(&[5.0, 1.0, 5.0, 1.0, 10.0]), Some(1.0));
        assert_eq!(mode_smallest(&[3.0; 5]), Some(3.0));
        assert_eq!(mode_smallest(&[]), None);
    }

    #[test]
    fn roi_candidate_count() {
        let region = PixelBox {
            x_min: 20,
            y_min: 30,
            x_max: 119,
            y_max: 129,
        };
        let spec = GridSearchSpec::default();
        assert_eq!(spec.candidate_count(&region), 97_200);
        let cands = enumerate_candidates(&region, &spec).unwrap();
        assert_eq!(cands.len(), 97_200);
        assert_eq!(
            (
                cands[0].x,
                cands[0].y,
                cands[0].w,
                cands[0].h,
                cands[0].theta
            ),
            (20.0, 30.0, 10.0, 10.0, 0.0)
        );
        assert_eq!(cands[1].theta, 15.0);
        assert_eq!(cands[12].h, 20.0);
        assert!(cands.iter().all(|r| region.contains(r.x, r.y)));
    }

    #[test]
    fn first_maximum_wins() {
        assert_eq!(first_argmax(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(first_argmax(&[]), None);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn natural_candidates() {
        let mut d = DictLearnConfig::new(DictMethod::Sc, 20);
        d.lambda = 0.7;
        let cfg = ExperimentConfig::new(d, EncoderChoice::Natural);
        let c = cfg.candidates();
        assert_eq!(c.len(), 4);
        assert!(c
            .iter()
            .all(|(s, d, e)| d.lambda == *s && e.sparsity == *s && e.kind == EncoderKind::Sc));
        let nkm = ExperimentConfig::new(
            DictLearnConfig::new(DictMethod::Nkm, 20),
            EncoderChoice::Natural,
        );
        assert_eq!(nkm.candidates().len(), 1);
        let st = ExperimentConfig::new(
            DictLearnConfig::new(DictMethod::R, 20),
            EncoderChoice::Fixed(EncoderKind::St),
        );
        assert_eq!(
            st.candidates().iter().map(|c| c.0).collect::<Vec<_>>(),
            vec![0.5, 1.0, 1.5, 2.0]
        );
    }

    #[test]
    fn choice_parsing() {
        assert_eq!(
            "natural".parse::<EncoderChoice>().unwrap(),
            EncoderChoice::Natural
        );
        assert_eq!(
            "momp".parse::<EncoderChoice>().unwrap(),
            EncoderChoice::Fixed(EncoderKind::Momp)
        );
        let json = serde_json::to_string(&EncoderChoice::Fixed(EncoderKind::St)).unwrap();
        assert_eq!(json, "\"st\"");
    }
}
