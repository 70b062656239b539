//! Scene ingestion, cross-validation splits and patch sampling.
//!
//! On-disk layout follows the Cornell grasping set: for a scene stem `S`,
//! `Sr.png` is the color image, `S.txt` the point cloud (PCD ascii rows
//! ending in a pixel index), and `Scpos.txt` / `Scneg.txt` hold the labeled
//! rectangles as four `x y` vertex lines each.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{polygon_to_rect, GraspRect, Polygon4};
use crate::imageproc::{MultiChannelImage, NUM_CHANNELS};

/// Side of a square patch.
pub const PATCH_SIDE: usize = 6;
/// Entries per channel block of a patch.
pub const PATCH_BLOCK: usize = PATCH_SIDE * PATCH_SIDE;
/// Length of a flattened `6 x 6 x 8` patch.
pub const PATCH_LEN: usize = PATCH_BLOCK * NUM_CHANNELS;

/// Default name of the scene-to-object mapping file inside a dataset directory.
pub const OBJECT_MAP_FILE: &str = "objects.tsv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Image { path: String, msg: String },
    #[error("need at least {needed} distinct objects for {needed}-fold splitting, found {found}")]
    TooFewObjects { needed: usize, found: usize },
    #[error("need at least {needed} scenes for {needed}-fold splitting, found {found}")]
    TooFewScenes { needed: usize, found: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("empty input: {0}")]
    Empty(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-pixel 3-D points; `None` marks pixels without depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    height: usize,
    width: usize,
    points: Vec<Option<[f64; 3]>>,
}

impl PointMap {
    pub fn new(height: usize, width: usize, points: Vec<Option<[f64; 3]>>) -> Self {
        assert_eq!(points.len(), height * width, "point map size");
        Self {
            height,
            width,
            points,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn point(&self, pixel: usize) -> Option<[f64; 3]> {
        self.points[pixel]
    }

    pub fn points(&self) -> &[Option<[f64; 3]>] {
        &self.points
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }
}

/// One labeled RGBD image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    height: usize,
    width: usize,
    rgb: Vec<u8>,
    pub cloud: PointMap,
    pub pos_rects: Vec<GraspRect>,
    pub neg_rects: Vec<GraspRect>,
    pub object_id: u32,
    /// Rectangles discarded while loading (non-finite or malformed vertices).
    pub dropped_rects: usize,
}

impl Scene {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: String,
        height: usize,
        width: usize,
        rgb: Vec<u8>,
        cloud: PointMap,
        pos_rects: Vec<GraspRect>,
        neg_rects: Vec<GraspRect>,
        object_id: u32,
    ) -> Result<Self, DatasetError> {
        if rgb.len() != height * width * 3 {
            return Err(DatasetError::DimensionMismatch(format!(
                "rgb buffer has {} bytes for a {height}x{width} image",
                rgb.len()
            )));
        }
        if (cloud.height, cloud.width) != (height, width) {
            return Err(DatasetError::DimensionMismatch(format!(
                "cloud is {}x{}, image is {height}x{width}",
                cloud.height, cloud.width
            )));
        }
        let inside = |r: &GraspRect| {
            r.x >= 0.0 && r.y >= 0.0 && r.x <= (width - 1) as f64 && r.y <= (height - 1) as f64
        };
        if let Some(r) = pos_rects.iter().chain(&neg_rects).find(|r| !inside(r)) {
            return Err(DatasetError::DimensionMismatch(format!(
                "rectangle center ({}, {}) outside {height}x{width} image",
                r.x, r.y
            )));
        }
        Ok(Self {
            id,
            height,
            width,
            rgb,
            cloud,
            pos_rects,
            neg_rects,
            object_id,
            dropped_rects: 0,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    #[inline]
    pub fn rgb_at(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Labeled rectangles with `+1` for graspable and `-1` otherwise.
    pub fn labeled_rects(&self) -> impl Iterator<Item = (GraspRect, i8)> + '_ {
        self.pos_rects
            .iter()
            .map(|&r| (r, 1))
            .chain(self.neg_rects.iter().map(|&r| (r, -1)))
    }
}

/// Parse a rectangle file; returns the rectangles and how many were dropped.
pub fn parse_rect_file(text: &str, file: &str) -> Result<(Vec<GraspRect>, usize), DatasetError> {
    let mut vertices = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(DatasetError::Parse {
                file: file.into(),
                line: i + 1,
                msg: format!("expected `x y`, found {} fields", fields.len()),
            });
        }
        let mut xy = [0.0; 2];
        for (slot, f) in xy.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|e| DatasetError::Parse {
                file: file.into(),
                line: i + 1,
                msg: format!("bad number `{f}`: {e}"),
            })?;
        }
        vertices.push((i + 1, xy));
    }
    if vertices.len() % 4 != 0 {
        let line = vertices.last().map_or(0, |v| v.0);
        return Err(DatasetError::Parse {
            file: file.into(),
            line,
            msg: format!("{} vertex lines is not a multiple of 4", vertices.len()),
        });
    }
    let mut rects = Vec::with_capacity(vertices.len() / 4);
    let mut dropped = 0;
    for quad in vertices.chunks(4) {
        let poly = Polygon4 {
            vertices: [quad[0].1, quad[1].1, quad[2].1, quad[3].1],
        };
        match polygon_to_rect(&poly) {
            Ok(r) => rects.push(r),
            Err(e) => {
                log::warn!("{file}:{}: dropping rectangle: {e}", quad[0].0);
                dropped += 1;
            }
        }
    }
    Ok((rects, dropped))
}

/// Parse an ascii point cloud whose rows end with a pixel index
/// (`row * width + col`); pixels not listed are invalid.
pub fn parse_point_cloud(
    text: &str,
    file: &str,
    height: usize,
    width: usize,
) -> Result<PointMap, DatasetError> {
    let mut points = vec![None; height * width];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty()
            || line.starts_with('#')
            || line.starts_with(|c: char| c.is_ascii_alphabetic())
        {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(DatasetError::Parse {
                file: file.into(),
                line: i + 1,
                msg: format!("expected `x y z ... index`, found {} fields", fields.len()),
            });
        }
        let num = |f: &str| {
            f.parse::<f64>().map_err(|e| DatasetError::Parse {
                file: file.into(),
                line: i + 1,
                msg: format!("bad number `{f}`: {e}"),
            })
        };
        let xyz = [num(fields[0])?, num(fields[1])?, num(fields[2])?];
        let idx = num(fields[fields.len() - 1])?;
        if idx < 0.0 || idx.fract() != 0.0 {
            return Err(DatasetError::Parse {
                file: file.into(),
                line: i + 1,
                msg: format!("pixel index `{idx}` is not a non-negative integer"),
            });
        }
        let idx = idx as usize;
        if idx >= points.len() {
            return Err(DatasetError::DimensionMismatch(format!(
                "{file}:{}: pixel index {idx} outside {height}x{width} image",
                i + 1
            )));
        }
        if xyz.iter().all(|v| v.is_finite()) {
            points[idx] = Some(xyz);
        }
    }
    Ok(PointMap::new(height, width, points))
}

/// Load one scene from its four files. The scene id is the cloud file stem
/// and the object id defaults to 0.
pub fn load_scene(
    image_path: &Path,
    cloud_path: &Path,
    pos_path: &Path,
    neg_path: &Path,
) -> Result<Scene, DatasetError> {
    let ic = load_image_and_cloud(image_path, cloud_path)?;
    let (height, width) = (ic.0, ic.1);
    let mut dropped = 0;
    let mut read_rects = |path: &Path| -> Result<Vec<GraspRect>, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let (rects, d) = parse_rect_file(&text, &path.display().to_string())?;
        let n = rects.len();
        let kept: Vec<GraspRect> = rects
            .into_iter()
            .filter(|r| {
                r.x >= 0.0 && r.y >= 0.0 && r.x <= (width - 1) as f64 && r.y <= (height - 1) as f64
            })
            .collect();
        dropped += d + (n - kept.len());
        Ok(kept)
    };
    let pos = read_rects(pos_path)?;
    let neg = read_rects(neg_path)?;
    finish_scene(cloud_path, ic, pos, neg, dropped)
}

type ImageAndCloud = (usize, usize, Vec<u8>, PointMap);

fn load_image_and_cloud(
    image_path: &Path,
    cloud_path: &Path,
) -> Result<ImageAndCloud, DatasetError> {
    let img = image::open(image_path)
        .map_err(|e| DatasetError::Image {
            path: image_path.display().to_string(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (width, height) = (img.width() as usize, img.height() as usize);
    let rgb = img.into_raw();

    let cloud_text = fs::read_to_string(cloud_path).map_err(io_err(cloud_path))?;
    let cloud = parse_point_cloud(
        &cloud_text,
        &cloud_path.display().to_string(),
        height,
        width,
    )?;
    Ok((height, width, rgb, cloud))
}

fn finish_scene(
    cloud_path: &Path,
    ic: ImageAndCloud,
    pos: Vec<GraspRect>,
    neg: Vec<GraspRect>,
    dropped: usize,
) -> Result<Scene, DatasetError> {
    let (height, width, rgb, cloud) = ic;
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rectangle(s)", cloud_path.display());
    }
    let id = cloud_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut scene = Scene::new(id, height, width, rgb, cloud, pos, neg, 0)?;
    scene.dropped_rects = dropped;
    Ok(scene)
}

/// File set of one scene found by [`discover_scenes`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ScenePaths {
    pub stem: String,
    pub image: PathBuf,
    pub cloud: PathBuf,
    pub pos: PathBuf,
    pub neg: PathBuf,
}

/// Recursively find complete scenes (`<stem>r.png` with its three text files).
pub fn discover_scenes(dir: &Path) -> Result<Vec<ScenePaths>, DatasetError> {
    let mut found = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let path = entry.map_err(io_err(&d))?.path();
            if path.is_dir() {
                pending.push(path);
                continue;
            }
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(stem) = name.strip_suffix("r.png") else {
                continue;
            };
            let parent = path.parent().unwrap_or(Path::new("."));
            let sp = ScenePaths {
                stem: stem.to_string(),
                image: path.clone(),
                cloud: parent.join(format!("{stem}.txt")),
                pos: parent.join(format!("{stem}cpos.txt")),
                neg: parent.join(format!("{stem}cneg.txt")),
            };
            if sp.cloud.is_file() && sp.pos.is_file() && sp.neg.is_file() {
                found.push(sp);
            } else {
                log::warn!("{}: incomplete scene, skipped", path.display());
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Load unlabeled scenes below `dir`: every `<stem>r.png` with a `<stem>.txt`
/// point cloud. Rectangle files are read when present and ignored otherwise.
pub fn load_auxiliary(dir: &Path) -> Result<Vec<Scene>, DatasetError> {
    let mut pairs = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let path = entry.map_err(io_err(&d))?.path();
            if path.is_dir() {
                pending.push(path);
                continue;
            }
            let Some(stem) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix("r.png"))
            else {
                continue;
            };
            let cloud = path.with_file_name(format!("{stem}.txt"));
            if cloud.is_file() {
                pairs.push((path.clone(), cloud));
            }
        }
    }
    pairs.sort();
    pairs
        .par_iter()
        .map(|(image, cloud)| {
            let ic = load_image_and_cloud(image, cloud)?;
            finish_scene(cloud, ic, Vec::new(), Vec::new(), 0)
        })
        .collect()
}

/// Parse a tab-separated `stem<TAB>object_id` mapping.
pub fn parse_object_map(text: &str, file: &str) -> Result<BTreeMap<String, u32>, DatasetError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(stem), Some(obj), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(DatasetError::Parse {
                file: file.into(),
                line: i + 1,
                msg: "expected `stem<TAB>object_id`".into(),
            });
        };
        let obj = obj.trim().parse::<u32>().map_err(|e| DatasetError::Parse {
            file: file.into(),
            line: i + 1,
            msg: format!("bad object id: {e}"),
        })?;
        map.insert(stem.trim().to_string(), obj);
    }
    Ok(map)
}

/// Load every scene below `dir`, assigning object ids from `objects.tsv` when
/// present (otherwise every scene is its own object).
pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>, DatasetError> {
    let paths = discover_scenes(dir)?;
    if paths.is_empty() {
        return Err(DatasetError::Empty(format!(
            "no scenes under {}",
            dir.display()
        )));
    }
    let map_path = dir.join(OBJECT_MAP_FILE);
    let objects = if map_path.is_file() {
        let text = fs::read_to_string(&map_path).map_err(io_err(&map_path))?;
        Some(parse_object_map(&text, &map_path.display().to_string())?)
    } else {
        log::warn!(
            "{} missing: treating every scene as a distinct object",
            map_path.display()
        );
        None
    };
    let mut scenes = paths
        .par_iter()
        .map(|p| load_scene(&p.image, &p.cloud, &p.pos, &p.neg))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, (scene, p)) in scenes.iter_mut().zip(&paths).enumerate() {
        scene.id = p.stem.clone();
        scene.object_id = match &objects {
            Some(m) => *m.get(&p.stem).ok_or_else(|| DatasetError::Parse {
                file: map_path.display().to_string(),
                line: 0,
                msg: format!("no object id for scene `{}`", p.stem),
            })?,
            None => i as u32,
        };
    }
    Ok(scenes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ImageWise,
    ObjectWise,
}

/// Disjoint folds of scene ids.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub folds: Vec<Vec<String>>,
    pub seed: u64,
}

impl SplitPlan {
    /// Fold number of every scene in `scenes`, by id.
    pub fn fold_of<S: Borrow<Scene>>(&self, scenes: &[S]) -> Vec<usize> {
        let lookup: BTreeMap<&str, usize> = self
            .folds
            .iter()
            .enumerate()
            .flat_map(|(f, ids)| ids.iter().map(move |id| (id.as_str(), f)))
            .collect();
        scenes
            .iter()
            .map(|s| lookup[s.borrow().id.as_str()])
            .collect()
    }
}

/// Split `keys` (item, group) into `k` folds. Groups are kept intact and
/// dealt round-robin after a seeded shuffle; returned folds hold item indices.
pub(crate) fn split_groups(groups: &[u64], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let distinct: BTreeSet<u64> = groups.iter().copied().collect();
    let mut order: Vec<u64> = distinct.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of_group: BTreeMap<u64, usize> =
        order.iter().enumerate().map(|(i, &g)| (g, i % k)).collect();
    let mut folds = vec![Vec::new(); k];
    for (i, g) in groups.iter().enumerate() {
        folds[fold_of_group[g]].push(i);
    }
    folds
}

/// Build a `k`-fold plan over scenes, image-wise or object-wise.
pub fn make_splits<S: Borrow<Scene>>(
    scenes: &[S],
    mode: SplitMode,
    k: usize,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    let scenes: Vec<&Scene> = scenes.iter().map(|s| s.borrow()).collect();
    if k < 2 {
        return Err(DatasetError::InvalidFoldCount(k));
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.sort_by(|&a, &b| scenes[a].id.cmp(&scenes[b].id));
    let groups: Vec<u64> = match mode {
        SplitMode::ImageWise => {
            if scenes.len() < k {
                return Err(DatasetError::TooFewScenes {
                    needed: k,
                    found: scenes.len(),
                });
            }
            (0..order.len() as u64).collect()
        }
        SplitMode::ObjectWise => {
            let distinct: BTreeSet<u32> = scenes.iter().map(|s| s.object_id).collect();
            if distinct.len() < k {
                return Err(DatasetError::TooFewObjects {
                    needed: k,
                    found: distinct.len(),
                });
            }
            order
                .iter()
                .map(|&i| u64::from(scenes[i].object_id))
                .collect()
        }
    };
    let folds = split_groups(&groups, k, seed)
        .into_iter()
        .map(|f| {
            let mut ids: Vec<String> = f.into_iter().map(|i| scenes[order[i]].id.clone()).collect();
            ids.sort();
            ids
        })
        .collect();
    Ok(SplitPlan { mode, folds, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchOrigin {
    Primary,
    Auxiliary,
}

/// `N` flattened `6 x 6 x 8` patches with their validity masks.
///
/// Layout is channel-major: entry `ch * 36 + row * 6 + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    patches: Vec<f64>,
    masks: Vec<bool>,
    origins: Vec<PatchOrigin>,
}

impl PatchBatch {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            patches: Vec::with_capacity(n * PATCH_LEN),
            masks: Vec::with_capacity(n * PATCH_LEN),
            origins: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, patch: &[f64], mask: &[bool], origin: PatchOrigin) {
        assert_eq!(patch.len(), PATCH_LEN);
        assert_eq!(mask.len(), PATCH_LEN);
        self.patches.extend(
            patch
                .iter()
                .zip(mask)
                .map(|(&v, &m)| if m { v } else { 0.0 }),
        );
        self.masks.extend_from_slice(mask);
        self.origins.push(origin);
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        &self.patches[i * PATCH_LEN..(i + 1) * PATCH_LEN]
    }

    pub fn patch_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.patches[i * PATCH_LEN..(i + 1) * PATCH_LEN]
    }

    pub fn mask(&self, i: usize) -> &[bool] {
        &self.masks[i * PATCH_LEN..(i + 1) * PATCH_LEN]
    }

    pub fn origin(&self, i: usize) -> PatchOrigin {
        self.origins[i]
    }

    /// Apply `f` to every (patch, mask) pair in place.
    pub fn map_patches<F>(&mut self, f: F)
    where
        F: Fn(&mut [f64], &[bool]) + Sync,
    {
        self.patches
            .par_chunks_mut(PATCH_LEN)
            .zip(self.masks.par_chunks(PATCH_LEN))
            .for_each(|(p, m)| f(p, m));
    }
}

/// Copy the `6 x 6 x 8` window with top-left `(row, col)` into channel-major buffers.
pub fn extract_patch(
    img: &MultiChannelImage,
    row: usize,
    col: usize,
    data: &mut [f64],
    mask: &mut [bool],
) {
    debug_assert!(row + PATCH_SIDE <= img.height() && col + PATCH_SIDE <= img.width());
    let (src_d, src_m) = (img.data(), img.mask());
    for dr in 0..PATCH_SIDE {
        for dc in 0..PATCH_SIDE {
            let base = img.index(row + dr, col + dc, 0);
            for ch in 0..NUM_CHANNELS {
                let o = ch * PATCH_BLOCK + dr * PATCH_SIDE + dc;
                data[o] = src_d[base + ch];
                mask[o] = src_m[base + ch];
            }
        }
    }
}

fn draw_from(
    sources: &[MultiChannelImage],
    count: usize,
    origin: PatchOrigin,
    rng: &mut ChaCha8Rng,
    out: &mut PatchBatch,
) {
    let mut data = [0.0; PATCH_LEN];
    let mut mask = [false; PATCH_LEN];
    for _ in 0..count {
        let img = &sources[rng.gen_range(0..sources.len())];
        let row = rng.gen_range(0..=img.height() - PATCH_SIDE);
        let col = rng.gen_range(0..=img.width() - PATCH_SIDE);
        extract_patch(img, row, col, &mut data, &mut mask);
        out.push(&data, &mask, origin);
    }
}

/// Draw `count` patches uniformly over (source, top-left position). With
/// auxiliary sources, another `count` patches are drawn from them and appended.
pub fn sample_patches(
    sources: &[MultiChannelImage],
    count: usize,
    seed: u64,
    aux_sources: Option<&[MultiChannelImage]>,
) -> Result<PatchBatch, DatasetError> {
    let usable = |s: &[MultiChannelImage]| -> Vec<MultiChannelImage> {
        s.iter()
            .filter(|img| img.height() >= PATCH_SIDE && img.width() >= PATCH_SIDE)
            .cloned()
            .collect()
    };
    if count == 0 {
        return Err(DatasetError::Empty("patch count must be positive".into()));
    }
    let primary = usable(sources);
    if primary.is_empty() {
        return Err(DatasetError::Empty(
            "no source image large enough for a patch".into(),
        ));
    }
    let aux = aux_sources.map(usable).filter(|a| !a.is_empty());
    let total = count * if aux.is_some() { 2 } else { 1 };
    let mut batch = PatchBatch::with_capacity(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_from(&primary, count, PatchOrigin::Primary, &mut rng, &mut batch);
    if let Some(aux) = aux {
        draw_from(&aux, count, PatchOrigin::Auxiliary, &mut rng, &mut batch);
    }
    Ok(batch)
}
