//! Eight-channel image derivation, grasp-rectangle crops and object localization.

use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PointMap, Scene};
use crate::geometry::{cos_sin_deg, GraspRect};

pub const NUM_CHANNELS: usize = 8;
pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = ["K", "R", "G", "B", "D", "Nx", "Ny", "Nz"];
pub const CH_K: usize = 0;
pub const CH_D: usize = 4;
pub const CH_NX: usize = 5;

/// Side of the square canvas every grasp rectangle is resampled into.
pub const CROP_SIZE: usize = 24;

const NORMAL_WINDOW_RADIUS: isize = 2;
const NORMAL_MIN_SUPPORT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Inlier distance to the support plane, in point-map units (mm).
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub seed: u64,
    pub min_component: usize,
    pub dilation: usize,
    pub min_valid_fraction: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 8.0,
            iterations: 500,
            seed: 0,
            min_component: 100,
            dilation: 20,
            min_valid_fraction: 0.2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("degenerate rectangle: {0}")]
    DegenerateRect(String),
    #[error("no foreground object found: {0}")]
    NoForeground(String),
    #[error("rectangle center ({x:.1}, {y:.1}) outside the image")]
    CenterOutside { x: f64, y: f64 },
    #[error("image i/o: {0}")]
    Io(String),
}

/// `H x W x 8` image with a per-entry validity mask.
///
/// Invariant: every masked entry stores exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl MultiChannelImage {
    pub fn new_masked(height: usize, width: usize) -> Self {
        let len = height * width * NUM_CHANNELS;
        Self {
            height,
            width,
            data: vec![0.0; len],
            mask: vec![false; len],
        }
    }

    /// Build from raw buffers; masked entries are forced to zero.
    pub fn from_parts(height: usize, width: usize, mut data: Vec<f64>, mask: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width * NUM_CHANNELS);
        assert_eq!(mask.len(), data.len());
        for (v, &m) in data.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        Self {
            height,
            width,
            data,
            mask,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * NUM_CHANNELS + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> Option<f64> {
        let i = self.index(row, col, ch);
        self.mask[i].then(|| self.data[i])
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: Option<f64>) {
        let i = self.index(row, col, ch);
        match value {
            Some(v) => {
                self.data[i] = v;
                self.mask[i] = true;
            }
            None => {
                self.data[i] = 0.0;
                self.mask[i] = false;
            }
        }
    }

    /// Bilinear sample of all channels at a continuous pixel position.
    ///
    /// A channel is valid only if every pixel with nonzero interpolation
    /// weight is inside the image and valid in that channel.
    fn sample(&self, px: f64, py: f64, out: &mut [Option<f64>; NUM_CHANNELS]) {
        *out = [None; NUM_CHANNELS];
        if !(px.is_finite() && py.is_finite()) {
            return;
        }
        let x0 = px.floor();
        let y0 = py.floor();
        let fx = px - x0;
        let fy = py - y0;
        let mut taps: [(isize, isize, f64); 4] = [(0, 0, 0.0); 4];
        let mut n = 0;
        for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                taps[n] = (y0 as isize + dy, x0 as isize + dx, wy * wx);
                n += 1;
            }
        }
        let taps = &taps[..n];
        if taps.iter().any(|&(r, c, _)| {
            r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width
        }) {
            return;
        }
        for (ch, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut ok = true;
            for &(r, c, wgt) in taps {
                let i = self.index(r as usize, c as usize, ch);
                if !self.mask[i] {
                    ok = false;
                    break;
                }
                acc += wgt * self.data[i];
            }
            if ok {
                *slot = Some(acc);
            }
        }
    }

    /// Fraction of pixels with a valid depth entry.
    pub fn depth_coverage(&self) -> f64 {
        let n = self.height * self.width;
        if n == 0 {
            return 0.0;
        }
        let valid = (0..n)
            .filter(|&p| self.mask[p * NUM_CHANNELS + CH_D])
            .count();
        valid as f64 / n as f64
    }
}

/// A grasp rectangle resampled to a `24 x 24 x 8` canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct RectCrop(MultiChannelImage);

impl RectCrop {
    pub fn image(&self) -> &MultiChannelImage {
        &self.0
    }

    pub fn into_image(self) -> MultiChannelImage {
        self.0
    }

    /// Wrap an existing `24 x 24` image, e.g. a synthetic test pattern.
    pub fn from_image(img: MultiChannelImage) -> Self {
        assert_eq!((img.height(), img.width()), (CROP_SIZE, CROP_SIZE));
        Self(img)
    }
}

/// Derive the K, R, G, B, D, Nx, Ny, Nz channels of a scene.
pub fn derive_channels(scene: &Scene) -> MultiChannelImage {
    let (h, w) = (scene.height(), scene.width());
    let normals = estimate_normals(&scene.cloud);
    let mut img = MultiChannelImage::new_masked(h, w);
    for row in 0..h {
        for col in 0..w {
            let [r, g, b] = scene.rgb_at(row, col).map(f64::from);
            img.set(row, col, CH_K, Some(0.299 * r + 0.587 * g + 0.114 * b));
            img.set(row, col, 1, Some(r));
            img.set(row, col, 2, Some(g));
            img.set(row, col, 3, Some(b));
            let p = row * w + col;
            let depth = scene.cloud.point(p).map(|pt| pt[2]);
            img.set(row, col, CH_D, depth);
            let n = if depth.is_some() { normals[p] } else { None };
            for k in 0..3 {
                img.set(row, col, CH_NX + k, n.map(|v| v[k]));
            }
        }
    }
    img
}

/// Per-pixel surface normals from a total-least-squares plane fit over the
/// 5x5 neighbourhood, oriented towards the camera.
pub fn estimate_normals(cloud: &PointMap) -> Vec<Option<[f64; 3]>> {
    let (h, w) = (cloud.height(), cloud.width());
    let mut out = vec![None; h * w];
    for row in 0..h {
        for col in 0..w {
            let p = row * w + col;
            let Some(center) = cloud.point(p) else {
                continue;
            };
            let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(25);
            for dr in -NORMAL_WINDOW_RADIUS..=NORMAL_WINDOW_RADIUS {
                for dc in -NORMAL_WINDOW_RADIUS..=NORMAL_WINDOW_RADIUS {
                    let (r, c) = (row as isize + dr, col as isize + dc);
                    if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
                        continue;
                    }
                    if let Some(q) = cloud.point(r as usize * w + c as usize) {
                        pts.push(Vector3::from(q));
                    }
                }
            }
            if pts.len() < NORMAL_MIN_SUPPORT {
                continue;
            }
            if let Some(n) = plane_normal(&pts) {
                out[p] = Some(orient_towards_camera(n, Vector3::from(center)));
            }
        }
    }
    out
}

/// Unit normal of the total-least-squares plane through `pts`.
fn plane_normal(pts: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let v: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
    let norm = v.norm();
    (norm > 0.0 && norm.is_finite()).then(|| v / norm)
}

fn orient_towards_camera(n: Vector3<f64>, point: Vector3<f64>) -> [f64; 3] {
    let flip = n.z > 0.0 || (n.z == 0.0 && n.dot(&point) > 0.0);
    let n = if flip { -n } else { n };
    [n.x, n.y, n.z]
}

/// Resample a grasp rectangle into the aspect-preserving `24 x 24` canvas.
pub fn extract_rect_crop(img: &MultiChannelImage, r: &GraspRect) -> Result<RectCrop, ImageError> {
    let inside = r.x >= -0.5
        && r.y >= -0.5
        && r.x < img.width() as f64 - 0.5
        && r.y < img.height() as f64 - 0.5;
    if !inside {
        return Err(ImageError::CenterOutside { x: r.x, y: r.y });
    }
    crop_at(img, r.x, r.y, r.theta, r.w, r.h)
}

/// Crop with an un-normalized angle; `theta` and `theta + 180` give crops
/// related by a half-turn.
pub(crate) fn crop_at(
    img: &MultiChannelImage,
    cx: f64,
    cy: f64,
    theta: f64,
    w: f64,
    h: f64,
) -> Result<RectCrop, ImageError> {
    let cols = w.round();
    let rows = h.round();
    if !(cols >= 1.0 && rows >= 1.0) {
        return Err(ImageError::DegenerateRect(format!("w={w} h={h}")));
    }
    let (cols, rows) = (cols as usize, rows as usize);
    let (c, s) = cos_sin_deg(theta);

    // stage 1: window in the rectangle frame, one sample per cell
    let mut window = MultiChannelImage::new_masked(rows, cols);
    let mut px = [None; NUM_CHANNELS];
    let (cell_u, cell_v) = (w / cols as f64, h / rows as f64);
    for j in 0..rows {
        let v = (j as f64 + 0.5) * cell_v - h / 2.0;
        for i in 0..cols {
            let u = (i as f64 + 0.5) * cell_u - w / 2.0;
            img.sample(cx + c * u - s * v, cy + s * u + c * v, &mut px);
            for (ch, val) in px.iter().enumerate() {
                window.set(j, i, ch, *val);
            }
        }
    }

    // stage 2: aspect-preserving rescale, centered on the canvas
    let scale = CROP_SIZE as f64 / w.max(h);
    let out_cols = ((w * scale).round() as usize).clamp(1, CROP_SIZE);
    let out_rows = ((h * scale).round() as usize).clamp(1, CROP_SIZE);
    let col0 = (CROP_SIZE - out_cols) / 2;
    let row0 = (CROP_SIZE - out_rows) / 2;
    let mut canvas = MultiChannelImage::new_masked(CROP_SIZE, CROP_SIZE);
    for j in 0..out_rows {
        let sy = resample_coord(j, out_rows, rows);
        for i in 0..out_cols {
            let sx = resample_coord(i, out_cols, cols);
            window.sample(sx, sy, &mut px);
            for (ch, val) in px.iter().enumerate() {
                canvas.set(row0 + j, col0 + i, ch, *val);
            }
        }
    }
    Ok(RectCrop(canvas))
}

/// Source coordinate for output index `i` when resizing `n_src` samples to `n_dst`.
fn resample_coord(i: usize, n_dst: usize, n_src: usize) -> f64 {
    if n_dst == n_src {
        return i as f64;
    }
    let x = (i as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5;
    x.clamp(0.0, (n_src - 1) as f64)
}

/// Axis-aligned pixel box with inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PixelBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl PixelBox {
    pub fn width(&self) -> usize {
        self.x_max + 1 - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max + 1 - self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min as f64
            && x <= self.x_max as f64
            && y >= self.y_min as f64
            && y <= self.y_max as f64
    }
}

/// Locate the object on the support plane.
///
/// The dominant plane is found by RANSAC over the valid 3-D points; pixels
/// off the plane are foreground and the largest 8-connected foreground
/// component, dilated and clipped, is returned.
pub fn object_region(
    img: &MultiChannelImage,
    cloud: &PointMap,
    params: &RansacParams,
) -> Result<PixelBox, ImageError> {
    let (h, w) = (cloud.height(), cloud.width());
    let valid: Vec<usize> = (0..h * w).filter(|&p| cloud.point(p).is_some()).collect();
    let coverage = if h * w == 0 {
        0.0
    } else {
        valid.len() as f64 / (h * w) as f64
    };
    if coverage < params.min_valid_fraction || valid.len() < 3 {
        return Err(ImageError::NoForeground(format!(
            "only {:.1}% of pixels carry depth",
            100.0 * coverage
        )));
    }
    debug_assert_eq!((img.height(), img.width()), (h, w));

    let pt = |p: usize| Vector3::from(cloud.point(p).expect("valid index"));
    let stride = (valid.len() / 20_000).max(1);
    let probe: Vec<Vector3<f64>> = valid.iter().step_by(stride).map(|&p| pt(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..params.iterations {
        let a = rng.gen_range(0..valid.len());
        let b = rng.gen_range(0..valid.len());
        let c = rng.gen_range(0..valid.len());
        if a == b || b == c || a == c {
            continue;
        }
        let (pa, pb, pc) = (pt(valid[a]), pt(valid[b]), pt(valid[c]));
        let n = (pb - pa).cross(&(pc - pa));
        let len = n.norm();
        if len <= 1e-12 {
            continue;
        }
        let n = n / len;
        let offset = -n.dot(&pa);
        let count = probe
            .iter()
            .filter(|q| (n.dot(q) + offset).abs() < params.inlier_threshold)
            .count();
        if best.as_ref().is_none_or(|(bc, _, _)| count > *bc) {
            best = Some((count, n, offset));
        }
    }
    let Some((_, mut normal, mut offset)) = best else {
        return Err(ImageError::NoForeground("no plane hypothesis".into()));
    };
    // least-squares refinement on the consensus set
    let inliers: Vec<Vector3<f64>> = valid
        .iter()
        .map(|&p| pt(p))
        .filter(|q| (normal.dot(q) + offset).abs() < params.inlier_threshold)
        .collect();
    if inliers.len() >= 3 {
        if let Some(n) = plane_normal(&inliers) {
            let mean = inliers.iter().fold(Vector3::zeros(), |a, p| a + p) / inliers.len() as f64;
            normal = n;
            offset = -n.dot(&mean);
        }
    }

    let mut foreground = vec![false; h * w];
    for &p in &valid {
        foreground[p] = (normal.dot(&pt(p)) + offset).abs() > params.inlier_threshold;
    }
    let component = largest_component(&foreground, h, w);
    if component.len() < params.min_component {
        return Err(ImageError::NoForeground(format!(
            "largest off-plane component has {} pixels",
            component.len()
        )));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for &p in &component {
        let (r, c) = (p / w, p % w);
        x0 = x0.min(c);
        x1 = x1.max(c);
        y0 = y0.min(r);
        y1 = y1.max(r);
    }
    let d = params.dilation;
    Ok(PixelBox {
        x_min: x0.saturating_sub(d),
        y_min: y0.saturating_sub(d),
        x_max: (x1 + d).min(w - 1),
        y_max: (y1 + d).min(h - 1),
    })
}

fn largest_component(fg: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut seen = vec![false; fg.len()];
    let mut best: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..fg.len() {
        if !fg[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            comp.push(p);
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if fg[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Dump a crop as one grayscale PNG per channel plus a mask PNG:
/// `<scene>_<rect>_<channel>.png`.
pub fn write_crop_pngs(
    crop: &RectCrop,
    dir: &Path,
    scene: &str,
    rect_index: usize,
) -> Result<(), ImageError> {
    let img = crop.image();
    let (h, w) = (img.height() as u32, img.width() as u32);
    for (ch, name) in CHANNEL_NAMES.iter().enumerate() {
        let vals: Vec<f64> = (0..img.height() * img.width())
            .filter(|&p| img.mask[p * NUM_CHANNELS + ch])
            .map(|p| img.data[p * NUM_CHANNELS + ch])
            .collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let plane = image::GrayImage::from_fn(w, h, |x, y| {
            let i = (y as usize * img.width() + x as usize) * NUM_CHANNELS + ch;
            if img.mask[i] {
                image::Luma([(255.0 * (img.data[i] - lo) / span)
                    .round()
                    .clamp(0.0, 255.0) as u8])
            } else {
                image::Luma([0])
            }
        });
        plane
            .save(dir.join(format!("{scene}_{rect_index}_{name}.png")))
            .map_err(|e| ImageError::Io(e.to_string()))?;
    }
    let mask = image::GrayImage::from_fn(w, h, |x, y| {
        let base = (y as usize * img.width() + x as usize) * NUM_CHANNELS;
        let all = (0..NUM_CHANNELS).all(|ch| img.mask[base + ch]);
        let any = (0..NUM_CHANNELS).any(|ch| img.mask[base + ch]);
        image::Luma([if all {
            255
        } else if any {
            128
        } else {
            0
        }])
    });
    mask.save(dir.join(format!("{scene}_{rect_index}_mask.png")))
        .map_err(|e| ImageError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PointMap;

    fn ramp_image(h: usize, w: usize) -> MultiChannelImage {
        let mut img = MultiChannelImage::new_masked(h, w);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..NUM_CHANNELS {
                    img.set(r, c, ch, Some((r * 1000 + c * 10 + ch) as f64));
                }
            }
        }
        img
    }

    fn plane_cloud(h: usize, w: usize, z: impl Fn(f64, f64) -> f64) -> PointMap {
        let mut pts = vec![None; h * w];
        for r in 0..h {
            for c in 0..w {
                let (x, y) = (c as f64, r as f64);
                pts[r * w + c] = Some([x, y, z(x, y)]);
            }
        }
        PointMap::new(h, w, pts)
    }

    #[test]
    fn flat_plane_normals_face_camera() {
        let cloud = plane_cloud(12, 12, |_, _| 1.0);
        let normals = estimate_normals(&cloud);
        for r in 2..10 {
            for c in 2..10 {
                let n = normals[r * 12 + c].unwrap();
                assert!(n[0].abs() < 1e-6 && n[1].abs() < 1e-6 && (n[2] + 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tilted_plane_normals() {
        // z = x has normal proportional to (1, 0, -1)
        let cloud = plane_cloud(12, 12, |x, _| x + 100.0);
        let normals = estimate_normals(&cloud);
        let k = 1.0 / 2f64.sqrt();
        for r in 2..10 {
            for c in 2..10 {
                let n = normals[r * 12 + c].unwrap();
                assert!((n[0] - k).abs() < 1e-6, "{n:?}");
                assert!(n[1].abs() < 1e-6);
                assert!((n[2] + k).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn isolated_pixel_has_no_normal() {
        let mut pts = vec![None; 25];
        pts[12] = Some([0.0, 0.0, 1.0]);
        let cloud = PointMap::new(5, 5, pts);
        assert!(estimate_normals(&cloud)[12].is_none());
    }

    #[test]
    fn identity_crop_copies_subimage() {
        let img = ramp_image(40, 40);
        // pixel centers sit on integer coordinates, so a 24-wide window
        // starting at column 5 is centered on 5 + 11.5
        let r = GraspRect::new(16.5, 11.5, 0.0, 24.0, 24.0).unwrap();
        let crop = extract_rect_crop(&img, &r).unwrap();
        let ci = crop.image();
        for j in 0..24 {
            for i in 0..24 {
                for ch in 0..NUM_CHANNELS {
                    assert_eq!(ci.get(j, i, ch), img.get(j, 5 + i, ch), "({j},{i},{ch})");
                }
            }
        }
    }

    #[test]
    fn wide_rectangle_is_letterboxed() {
        let img = ramp_image(60, 80);
        let r = GraspRect::new(40.0, 30.0, 0.0, 48.0, 24.0).unwrap();
        let crop = extract_rect_crop(&img, &r).unwrap();
        let ci = crop.image();
        for j in 0..24 {
            let row_valid = (0..24).all(|i| (0..NUM_CHANNELS).all(|ch| ci.get(j, i, ch).is_some()));
            let row_masked =
                (0..24).all(|i| (0..NUM_CHANNELS).all(|ch| ci.get(j, i, ch).is_none()));
            if (6..18).contains(&j) {
                assert!(row_valid, "row {j}");
            } else {
                assert!(row_masked, "row {j}");
            }
        }
    }

    #[test]
    fn depth_hole_masks_depth_channels_only() {
        let mut img = ramp_image(40, 40);
        for r in 10..20 {
            for c in 10..20 {
                for ch in CH_D..NUM_CHANNELS {
                    img.set(r, c, ch, None);
                }
            }
        }
        let r = GraspRect::new(15.0, 15.0, 30.0, 20.0, 20.0).unwrap();
        let crop = extract_rect_crop(&img, &r).unwrap();
        let ci = crop.image();
        // the hole covers the rectangle center
        assert!(ci.get(12, 12, CH_D).is_none());
        assert!(ci.get(12, 12, CH_K).is_some());
        assert!(ci.get(12, 12, 3).is_some());
    }

    #[test]
    fn degenerate_and_outside_rects() {
        let img = ramp_image(20, 20);
        let r = GraspRect::new(10.0, 10.0, 0.0, 0.4, 5.0).unwrap();
        assert!(matches!(
            extract_rect_crop(&img, &r),
            Err(ImageError::DegenerateRect(_))
        ));
        let r = GraspRect::new(30.0, 10.0, 0.0, 5.0, 5.0).unwrap();
        assert!(matches!(
            extract_rect_crop(&img, &r),
            Err(ImageError::CenterOutside { .. })
        ));
    }

    #[test]
    fn luminance_of_white_is_255() {
        let scene = crate::dataset::Scene::new(
            "white".into(),
            1,
            1,
            vec![255, 255, 255],
            PointMap::new(1, 1, vec![None]),
            vec![],
            vec![],
            0,
        )
        .unwrap();
        let img = derive_channels(&scene);
        assert!((img.get(0, 0, CH_K).unwrap() - 255.0).abs() < 1e-9);
        assert_eq!(img.get(0, 0, CH_D), None);
        assert_eq!(img.data()[img.index(0, 0, CH_NX)], 0.0);
    }
}
