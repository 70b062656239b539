//! Oriented grasp rectangles, polygon overlap and the rectangle metric.
//!
//! Coordinates are pixel coordinates: `x` grows along columns, `y` along
//! rows, and pixel `(row, col)` has its center at `(col, row)`. Angles are
//! measured in degrees from the x-axis towards the y-axis.

use thiserror::Error;

/// Maximum angular difference (exclusive) for a detection to count as correct.
pub const METRIC_MAX_ANGLE_DEG: f64 = 30.0;
/// Minimum Jaccard overlap (exclusive) for a detection to count as correct.
pub const METRIC_MIN_JACCARD: f64 = 0.25;

/// Tolerances used when turning four vertices back into a rectangle.
const PARALLEL_TOL_DEG: f64 = 1.0;
const LENGTH_TOL_PX: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid rectangle: {0}")]
    InvalidRect(String),
    #[error("vertices do not form a rectangle: {0}")]
    NotARectangle(String),
    #[error("ground-truth set is empty")]
    EmptyGroundTruth,
}

/// Five-parameter grasp rectangle.
///
/// `w` is the extent along the `theta` direction (the gripper opening),
/// `h` the extent across it (the plate length).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GraspRect {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub w: f64,
    pub h: f64,
}

/// Four ordered vertices of a convex quadrilateral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polygon4 {
    pub vertices: [[f64; 2]; 4],
}

/// Reduce an angle in degrees to `[0, 180)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let a = theta.rem_euclid(180.0);
    // rem_euclid can round up to the modulus itself for tiny negative inputs
    if a >= 180.0 {
        0.0
    } else {
        a
    }
}

/// Minimal absolute difference between two orientations modulo 180, in `[0, 90]`.
pub fn angular_difference(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    d.min(180.0 - d)
}

/// Cosine and sine of an angle in degrees, exact at multiples of 90 and
/// exactly antisymmetric under a half turn.
pub fn cos_sin_deg(theta: f64) -> (f64, f64) {
    let full = theta.rem_euclid(360.0);
    let (half, flip) = if full >= 180.0 {
        (full - 180.0, -1.0)
    } else {
        (full, 1.0)
    };
    let (c, s) = if half == 0.0 {
        (1.0, 0.0)
    } else if half == 90.0 {
        (0.0, 1.0)
    } else {
        let r = half.to_radians();
        (r.cos(), r.sin())
    };
    (flip * c, flip * s)
}

impl GraspRect {
    /// Build a validated rectangle; `theta` is normalized to `[0, 180)`.
    pub fn new(x: f64, y: f64, theta: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(GeometryError::InvalidRect("non-finite parameter".into()));
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(GeometryError::InvalidRect(format!(
                "extents must be positive, got w={w} h={h}"
            )));
        }
        Ok(Self {
            x,
            y,
            theta: normalize_angle(theta),
            w,
            h,
        })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in counter-clockwise order, starting from the corner at
    /// angle `theta + atan2(h, w)` from the center.
    pub fn to_polygon(&self) -> Polygon4 {
        let (c, s) = cos_sin_deg(self.theta);
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        let corner = |u: f64, v: f64| [self.x + c * u - s * v, self.y + s * u + c * v];
        Polygon4 {
            vertices: [
                corner(hw, hh),
                corner(-hw, hh),
                corner(-hw, -hh),
                corner(hw, -hh),
            ],
        }
    }

    /// Whether the point lies inside (or on the boundary of) the rectangle.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (c, s) = cos_sin_deg(self.theta);
        let (dx, dy) = (px - self.x, py - self.y);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= self.w / 2.0 && v.abs() <= self.h / 2.0
    }
}

pub fn rect_to_polygon(r: &GraspRect) -> Polygon4 {
    r.to_polygon()
}

fn edge(p: &Polygon4, i: usize) -> [f64; 2] {
    let a = p.vertices[i];
    let b = p.vertices[(i + 1) % 4];
    [b[0] - a[0], b[1] - a[1]]
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Angle between two edge directions, ignoring orientation, in degrees.
fn line_angle(a: [f64; 2], b: [f64; 2]) -> f64 {
    angular_difference(a[1].atan2(a[0]).to_degrees(), b[1].atan2(b[0]).to_degrees())
}

/// Recover a grasp rectangle from four vertices.
///
/// The first edge (vertex 0 to vertex 1) fixes `theta` and `w`; the second
/// edge fixes `h`. This is the inverse of [`rect_to_polygon`].
pub fn polygon_to_rect(p: &Polygon4) -> Result<GraspRect, GeometryError> {
    if p.vertices.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GeometryError::NotARectangle("non-finite vertex".into()));
    }
    let edges: Vec<[f64; 2]> = (0..4).map(|i| edge(p, i)).collect();
    let lengths: Vec<f64> = edges.iter().map(|&e| norm2(e)).collect();
    if lengths.iter().any(|&l| l <= 0.0) {
        return Err(GeometryError::NotARectangle("degenerate edge".into()));
    }
    for i in 0..2 {
        let par = line_angle(edges[i], edges[i + 2]);
        if par > PARALLEL_TOL_DEG {
            return Err(GeometryError::NotARectangle(format!(
                "edges {i} and {} differ in direction by {par:.3} deg",
                i + 2
            )));
        }
        if (lengths[i] - lengths[i + 2]).abs() > LENGTH_TOL_PX {
            return Err(GeometryError::NotARectangle(format!(
                "edges {i} and {} differ in length by {:.3} px",
                i + 2,
                (lengths[i] - lengths[i + 2]).abs()
            )));
        }
    }
    let corner = (90.0 - line_angle(edges[0], edges[1])).abs();
    if corner > PARALLEL_TOL_DEG {
        return Err(GeometryError::NotARectangle(format!(
            "corner deviates from a right angle by {corner:.3} deg"
        )));
    }
    let cx = p.vertices.iter().map(|v| v[0]).sum::<f64>() / 4.0;
    let cy = p.vertices.iter().map(|v| v[1]).sum::<f64>() / 4.0;
    let theta = edges[0][1].atan2(edges[0][0]).to_degrees();
    let w = (lengths[0] + lengths[2]) / 2.0;
    let h = (lengths[1] + lengths[3]) / 2.0;
    GraspRect::new(cx, cy, theta, w, h)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon (positive for counter-clockwise order).
pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

/// Sutherland-Hodgman clipping of `subject` against the convex, counter-clockwise `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for k in 0..m {
            let cur = input[k];
            let prev = input[(k + m - 1) % m];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn lexi_key(r: &GraspRect) -> [f64; 5] {
    [r.x, r.y, r.theta, r.w, r.h]
}

/// Exact area of the intersection of two oriented rectangles.
pub fn intersection_area(r1: &GraspRect, r2: &GraspRect) -> f64 {
    // clip in a canonical order so the result does not depend on argument order
    let (a, b) = match lexi_key(r1)
        .iter()
        .zip(lexi_key(r2).iter())
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
    {
        Some(std::cmp::Ordering::Greater) => (r2, r1),
        _ => (r1, r2),
    };
    let pa = a.to_polygon().vertices;
    let pb = b.to_polygon().vertices;
    signed_area(&clip_convex(&pa, &pb)).abs()
}

/// Jaccard index `area(r1 ∩ r2) / area(r1 ∪ r2)`.
pub fn jaccard(r1: &GraspRect, r2: &GraspRect) -> f64 {
    let inter = intersection_area(r1, r2);
    let union = r1.area() + r2.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Success test for a detected rectangle against a set of labels.
pub fn rectangle_metric(
    candidate: &GraspRect,
    ground_truths: &[GraspRect],
) -> Result<bool, GeometryError> {
    if ground_truths.is_empty() {
        return Err(GeometryError::EmptyGroundTruth);
    }
    Ok(ground_truths.iter().any(|g| {
        angular_difference(candidate.theta, g.theta) < METRIC_MAX_ANGLE_DEG
            && jaccard(candidate, g) > METRIC_MIN_JACCARD
    }))
}
