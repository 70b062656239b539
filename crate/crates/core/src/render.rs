//! PNG renderings: dictionary atom mosaics and detection overlays.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::DMatrix;

use crate::dataset::{Scene, PATCH_BLOCK, PATCH_LEN, PATCH_SIDE};
use crate::geometry::GraspRect;
use crate::imageproc::ImageError;

/// Channel groups of a mosaic: name and channel indices (one gray channel
/// or three shown as RGB).
pub const ATOM_GROUPS: [(&str, &[usize]); 4] = [
    ("k", &[0]),
    ("rgb", &[1, 2, 3]),
    ("d", &[4]),
    ("normals", &[5, 6, 7]),
];

const BORDER: u32 = 1;

/// Tile the atoms (columns of `atoms`, 288 entries each) into one mosaic per
/// channel group. Each tile is contrast-stretched over its own values and
/// magnified by `scale`.
pub fn atom_mosaics(atoms: &DMatrix<f64>, scale: u32) -> Vec<(&'static str, RgbImage)> {
    assert_eq!(atoms.nrows(), PATCH_LEN, "atoms must have {PATCH_LEN} rows");
    let n = atoms.ncols();
    let cols = ((n as f64).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols).max(1);
    let scale = scale.max(1);
    let tile = PATCH_SIDE as u32 * scale;
    let (w, h) = (
        cols as u32 * (tile + BORDER) + BORDER,
        rows as u32 * (tile + BORDER) + BORDER,
    );
    ATOM_GROUPS
        .iter()
        .map(|&(name, chans)| {
            let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
            for (j, atom) in atoms.column_iter().enumerate() {
                let vals: Vec<f64> = chans
                    .iter()
                    .flat_map(|&ch| {
                        atom.rows(ch * PATCH_BLOCK, PATCH_BLOCK)
                            .iter()
                            .copied()
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = if hi > lo { hi - lo } else { 1.0 };
                let level = |v: f64| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8;
                let x0 = BORDER + (j % cols) as u32 * (tile + BORDER);
                let y0 = BORDER + (j / cols) as u32 * (tile + BORDER);
                for r in 0..PATCH_SIDE {
                    for c in 0..PATCH_SIDE {
                        let px = |ch: usize| level(atom[ch * PATCH_BLOCK + r * PATCH_SIDE + c]);
                        let color = match chans {
                            [g] => Rgb([px(*g); 3]),
                            [a, b, c3] => Rgb([px(*a), px(*b), px(*c3)]),
                            _ => unreachable!(),
                        };
                        for dy in 0..scale {
                            for dx in 0..scale {
                                img.put_pixel(
                                    x0 + c as u32 * scale + dx,
                                    y0 + r as u32 * scale + dy,
                                    color,
                                );
                            }
                        }
                    }
                }
            }
            (name, img)
        })
        .collect()
}

/// Write `<prefix>_<group>.png` for every channel group.
pub fn write_atom_mosaics(
    atoms: &DMatrix<f64>,
    scale: u32,
    dir: &Path,
    prefix: &str,
) -> Result<Vec<String>, ImageError> {
    let mut written = Vec::new();
    for (name, img) in atom_mosaics(atoms, scale) {
        let file = format!("{prefix}_{name}.png");
        img.save(dir.join(&file))
            .map_err(|e| ImageError::Io(format!("{file}: {e}")))?;
        written.push(file);
    }
    Ok(written)
}

fn draw_line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], color: Rgb<u8>) {
    let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (a[0] + t * (b[0] - a[0])).round();
        let y = (a[1] + t * (b[1] - a[1])).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// The scene's RGB image with `rect` drawn on top: the two edges along the
/// opening direction in red, the two gripper plates in blue.
pub fn overlay(scene: &Scene, rect: &GraspRect) -> RgbImage {
    let mut img = RgbImage::from_fn(scene.width() as u32, scene.height() as u32, |x, y| {
        Rgb(scene.rgb_at(y as usize, x as usize))
    });
    let v = rect.to_polygon().vertices;
    for i in 0..4 {
        let color = if i % 2 == 0 {
            Rgb([255, 0, 0])
        } else {
            Rgb([0, 0, 255])
        };
        draw_line(&mut img, v[i], v[(i + 1) % 4], color);
    }
    img
}

pub fn write_overlay(scene: &Scene, rect: &GraspRect, path: &Path) -> Result<(), ImageError> {
    overlay(scene, rect)
        .save(path)
        .map_err(|e| ImageError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn mosaic_layout() {
        let atoms = DMatrix::from_fn(PATCH_LEN, 10, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let m = atom_mosaics(&atoms, 2);
        assert_eq!(
            m.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
            ["k", "rgb", "d", "normals"]
        );
        // 10 atoms on a 4 x 3 grid of 12-px tiles with 1-px borders
        assert_eq!(m[0].1.dimensions(), (4 * 13 + 1, 3 * 13 + 1));
    }

    #[test]
    fn mosaic_stretches_each_tile() {
        let mut atoms = DMatrix::zeros(PATCH_LEN, 1);
        atoms[(0, 0)] = 5.0;
        let (_, k) = &atom_mosaics(&atoms, 1)[0];
        assert_eq!(k.get_pixel(1, 1), &Rgb([255, 255, 255]));
        assert_eq!(k.get_pixel(2, 1), &Rgb([0, 0, 0]));
    }

    #[test]
    fn overlay_marks_rect() {
        let scene = generate(&SynthConfig::detection(1, 0)).remove(0);
        let rect = GraspRect::new(30.0, 30.0, 0.0, 20.0, 10.0).unwrap();
        let img = overlay(&scene, &rect);
        // first polygon edge is the top side at y = 35 (w direction)
        assert_eq!(img.get_pixel(30, 35), &Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(20, 30), &Rgb([0, 0, 255]));
    }
}
