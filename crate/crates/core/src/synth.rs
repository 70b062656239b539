//! Seeded synthetic tabletop scenes with planted grasp rectangles.
//!
//! A camera looks straight down at a table plane about one meter away.
//! Objects are raised bars or disks; positive rectangles span an object
//! across its narrow side, negatives lie on the table, along a bar or over a
//! single edge.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetError, PointMap, Scene, OBJECT_MAP_FILE};
use crate::geometry::{rect_to_polygon, GraspRect};

const TABLE_DEPTH: f64 = 1000.0;
const FOCAL: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// Center, axis angle (degrees), length, width.
    Bar {
        cx: f64,
        cy: f64,
        phi: f64,
        len: f64,
        wid: f64,
    },
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Bar {
                cx,
                cy,
                phi,
                len,
                wid,
            } => {
                let (s, c) = phi.to_radians().sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= len / 2.0 && v.abs() <= wid / 2.0
            }
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
        }
    }

    fn centre(&self) -> (f64, f64) {
        match *self {
            Shape::Bar { cx, cy, .. } | Shape::Disk { cx, cy, .. } => (cx, cy),
        }
    }

    fn extent(&self) -> f64 {
        match *self {
            Shape::Bar { len, wid, .. } => 0.5 * (len * len + wid * wid).sqrt(),
            Shape::Disk { r, .. } => r,
        }
    }
}

/// Parameters of a generated scene set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub scenes: usize,
    pub height: usize,
    pub width: usize,
    /// Alternate bars and disks; bars only when false.
    pub two_classes: bool,
    pub positives: usize,
    pub negatives: usize,
    /// Scenes per object id.
    pub views_per_object: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Bars and disks for recognition experiments.
    pub fn recognition(scenes: usize, seed: u64) -> Self {
        Self {
            scenes,
            height: 72,
            width: 72,
            two_classes: true,
            positives: 4,
            negatives: 6,
            views_per_object: 2,
            seed,
        }
    }

    /// One bar per scene, many positives along it, for detection.
    pub fn detection(scenes: usize, seed: u64) -> Self {
        Self {
            scenes,
            height: 64,
            width: 64,
            two_classes: false,
            positives: 6,
            negatives: 15,
            views_per_object: 1,
            seed,
        }
    }
}

/// Generate scenes named `synth0000`, `synth0001`, ...
pub fn generate(cfg: &SynthConfig) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.scenes)
        .map(|i| {
            let bar = !cfg.two_classes || i % 2 == 0;
            let object = (i / cfg.views_per_object.max(1)) as u32;
            make_scene(cfg, format!("synth{i:04}"), bar, object, &mut rng)
        })
        .collect()
}

fn make_scene(
    cfg: &SynthConfig,
    id: String,
    bar: bool,
    object_id: u32,
    rng: &mut ChaCha8Rng,
) -> Scene {
    let (h, w) = (cfg.height, cfg.width);
    let (mx, my) = (w as f64 / 2.0, h as f64 / 2.0);
    let shape = if bar {
        Shape::Bar {
            cx: mx + rng.gen_range(-4.0..4.0),
            cy: my + rng.gen_range(-4.0..4.0),
            phi: rng.gen_range(0.0..180.0),
            len: rng.gen_range(30.0..38.0),
            wid: rng.gen_range(9.0..12.0),
        }
    } else {
        Shape::Disk {
            cx: mx + rng.gen_range(-4.0..4.0),
            cy: my + rng.gen_range(-4.0..4.0),
            r: rng.gen_range(8.0..11.0),
        }
    };
    let object_height = rng.gen_range(30.0..50.0);
    // slightly tilted table
    let (tx, ty) = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
    let table_rgb = [
        rng.gen_range(150..200u8),
        rng.gen_range(150..200u8),
        rng.gen_range(140..190u8),
    ];
    let obj_rgb = [
        rng.gen_range(20..120u8),
        rng.gen_range(20..120u8),
        rng.gen_range(20..200u8),
    ];

    let mut rgb = Vec::with_capacity(h * w * 3);
    let mut points = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64, r as f64);
            let inside = shape.contains(x, y);
            let mut z = TABLE_DEPTH + tx * (x - mx) + ty * (y - my);
            if inside {
                z -= object_height;
            }
            z += rng.gen_range(-0.5..0.5);
            let base = if inside { obj_rgb } else { table_rgb };
            for v in base {
                rgb.push((v as i32 + rng.gen_range(-8..=8)).clamp(0, 255) as u8);
            }
            points.push(Some([(x - mx) * z / FOCAL, (y - my) * z / FOCAL, z]));
        }
    }
    let cloud = PointMap::new(h, w, points);
    let pos = (0..cfg.positives)
        .map(|k| positive(&shape, k, cfg.positives, rng))
        .collect();
    let neg = (0..cfg.negatives)
        .map(|k| negative(&shape, k, h, w, rng))
        .collect();
    Scene::new(id, h, w, rgb, cloud, pos, neg, object_id)
        .expect("generated rectangles lie inside the image")
}

fn rect(x: f64, y: f64, theta: f64, w: f64, h: f64) -> GraspRect {
    GraspRect::new(x, y, theta, w, h).expect("positive size")
}

/// Rectangle spanning the object across its narrow side.
fn positive(shape: &Shape, k: usize, count: usize, rng: &mut ChaCha8Rng) -> GraspRect {
    match *shape {
        Shape::Bar {
            cx,
            cy,
            phi,
            len,
            wid,
        } => {
            // spread along the bar, away from its ends
            let span = len / 2.0 - 6.0;
            let t = if count > 1 {
                -span + 2.0 * span * k as f64 / (count - 1) as f64
            } else {
                0.0
            };
            let t = t + rng.gen_range(-1.0..1.0);
            let (s, c) = phi.to_radians().sin_cos();
            rect(
                cx + c * t,
                cy + s * t,
                phi + 90.0 + rng.gen_range(-8.0..8.0),
                wid + rng.gen_range(10.0..14.0),
                rng.gen_range(8.0..11.0),
            )
        }
        Shape::Disk { cx, cy, r } => rect(
            cx + rng.gen_range(-1.5..1.5),
            cy + rng.gen_range(-1.5..1.5),
            rng.gen_range(0.0..180.0),
            2.0 * r + rng.gen_range(10.0..14.0),
            rng.gen_range(8.0..11.0),
        ),
    }
}

/// Negatives cycle through: on the table, along the bar, over one edge,
/// diagonally across a bar and across a bar's end.
fn negative(shape: &Shape, k: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> GraspRect {
    let size = |rng: &mut ChaCha8Rng| (rng.gen_range(18.0..28.0), rng.gen_range(8.0..11.0));
    let (cx, cy) = shape.centre();
    match (k % 5, shape) {
        (3, Shape::Bar { phi, len, .. }) => {
            let t = rng.gen_range(-len / 3.0..len / 3.0);
            let off = rng.gen_range(40.0..70.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (s, c) = phi.to_radians().sin_cos();
            let (rw, rh) = size(rng);
            rect(cx + c * t, cy + s * t, phi + 90.0 + off, rw, rh)
        }
        (4, Shape::Bar { phi, len, .. }) => {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let t = sign * (len / 2.0 + rng.gen_range(-2.0..3.0));
            let (s, c) = phi.to_radians().sin_cos();
            let (rw, rh) = size(rng);
            let (x, y) = (cx + c * t, cy + s * t);
            rect(
                x.clamp(0.0, (w - 1) as f64),
                y.clamp(0.0, (h - 1) as f64),
                rng.gen_range(0.0..180.0),
                rw,
                rh,
            )
        }
        (1, Shape::Bar { phi, len, .. }) => {
            let t = rng.gen_range(-len / 4.0..len / 4.0);
            let (s, c) = phi.to_radians().sin_cos();
            let (rw, rh) = size(rng);
            rect(
                cx + c * t,
                cy + s * t,
                phi + rng.gen_range(-10.0..10.0),
                rw,
                rh,
            )
        }
        (2, _) => {
            // centered on the object's boundary so only one edge is covered
            let (rw, rh) = size(rng);
            let (theta, dist) = match *shape {
                Shape::Bar { phi, wid, .. } => (phi + 90.0, wid / 2.0 + rw / 2.0 - 2.0),
                Shape::Disk { r, .. } => (rng.gen_range(0.0..180.0), r + rw / 2.0 - 2.0),
            };
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (s, c) = theta.to_radians().sin_cos();
            let (x, y) = (cx + sign * c * dist, cy + sign * s * dist);
            rect(
                x.clamp(0.0, (w - 1) as f64),
                y.clamp(0.0, (h - 1) as f64),
                theta,
                rw,
                rh,
            )
        }
        _ => {
            // table only
            let (rw, rh) = size(rng);
            let margin = shape.extent() + rw / 2.0 + 2.0;
            loop {
                let x = rng.gen_range(0.0..(w - 1) as f64);
                let y = rng.gen_range(0.0..(h - 1) as f64);
                if (x - cx).hypot(y - cy) > margin || margin > (w.min(h) as f64) {
                    return rect(x, y, rng.gen_range(0.0..180.0), rw, rh);
                }
            }
        }
    }
}

fn rect_file(rects: &[GraspRect]) -> String {
    let mut out = String::new();
    for r in rects {
        for [x, y] in rect_to_polygon(r).vertices {
            let _ = writeln!(out, "{x} {y}");
        }
    }
    out
}

/// Write scenes in the on-disk dataset layout (`<id>r.png`, `<id>.txt`,
/// `<id>cpos.txt`, `<id>cneg.txt`) plus the object map.
pub fn write_dataset(scenes: &[Scene], dir: &Path) -> Result<(), DatasetError> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| DatasetError::Io { path: p, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut objects = String::new();
    for s in scenes {
        let png = dir.join(format!("{}r.png", s.id));
        image::save_buffer(
            &png,
            s.rgb(),
            s.width() as u32,
            s.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| DatasetError::Image {
            path: png.display().to_string(),
            msg: e.to_string(),
        })?;
        let mut cloud = String::from("# x y z rgb index\n");
        for (i, p) in s.cloud.points().iter().enumerate() {
            if let Some([x, y, z]) = p {
                let _ = writeln!(cloud, "{x} {y} {z} 0 {i}");
            }
        }
        let files = [
            (format!("{}.txt", s.id), cloud),
            (format!("{}cpos.txt", s.id), rect_file(&s.pos_rects)),
            (format!("{}cneg.txt", s.id), rect_file(&s.neg_rects)),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(&path))?;
        }
        let _ = writeln!(objects, "{}\t{}", s.id, s.object_id);
    }
    let map = dir.join(OBJECT_MAP_FILE);
    fs::write(&map, objects).map_err(io(&map))
}
