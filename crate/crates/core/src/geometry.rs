//! Rotated-box representations and exact rotated IoU.
//!
//! Two box parameterizations are used throughout the crate:
//!
//! * [`RBoxCenter`]: center, size and orientation `(cx, cy, w, h, theta)`.
//! * [`RBoxDist`]: distances from a grid point to the four edges of the box
//!   plus orientation `(l, t, r, b, theta)`, as predicted by the anchor-free
//!   proposal head.
//!
//! Angles are kept in the canonical range `[-pi/4, 3pi/4)`. A rectangle is
//! unchanged by a rotation of `pi`, so every orientation has exactly one
//! canonical representative.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower end of the canonical angle range.
pub const THETA_MIN: f64 = -FRAC_PI_4;
/// Upper (exclusive) end of the canonical angle range.
pub const THETA_MAX: f64 = 3.0 * FRAC_PI_4;

/// Tolerance on cross products when deciding which side of a clip edge a
/// vertex lies on.
const CLIP_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box size must be finite and positive, got w={w}, h={h}")]
    InvalidSize { w: f64, h: f64 },
    #[error("box parameters must be finite")]
    NonFinite,
    #[error("degenerate edge distances: l+r={horizontal}, t+b={vertical}")]
    DegenerateDistances { horizontal: f64, vertical: f64 },
    #[error("point ({x}, {y}) is not strictly inside the box")]
    PointOutside { x: f64, y: f64 },
    #[error("quadrilateral has zero area")]
    DegenerateQuad,
}

/// Wraps an angle into `[-pi/4, 3pi/4)` by adding a multiple of `pi`.
pub fn normalize_angle(theta: f64) -> f64 {
    wrap_into(theta, THETA_MIN)
}

/// `a - b` wrapped by a multiple of `pi` into `[-pi/2, pi/2)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_into(a - b, -FRAC_PI_2)
}

fn wrap_into(x: f64, lo: f64) -> f64 {
    if (lo..lo + PI).contains(&x) {
        return x;
    }
    let mut r = (x - lo).rem_euclid(PI);
    // rem_euclid may round up to exactly PI
    if r >= PI {
        r -= PI;
    }
    let out = r + lo;
    if out >= lo + PI {
        lo
    } else {
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Rotated rectangle given by center, size and orientation.
///
/// Construction validates the size and normalizes the angle, so a value of
/// this type always satisfies `w > 0`, `h > 0` and `theta` in the canonical
/// range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RBoxCenter {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl RBoxCenter {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self, GeometryError> {
        if !(cx.is_finite() && cy.is_finite() && theta.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(GeometryError::InvalidSize { w, h });
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Parameters as `[cx, cy, w, h, theta]`.
    pub fn to_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }

    /// Expresses `p` in the box frame: offsets along the width and height
    /// axes relative to the center.
    pub fn to_local(&self, p: Point) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        (dx * c + dy * s, -dx * s + dy * c)
    }

    /// Inverse of [`RBoxCenter::to_local`].
    pub fn to_image(&self, u: f64, v: f64) -> Point {
        let (s, c) = self.theta.sin_cos();
        Point::new(self.cx + u * c - v * s, self.cy + u * s + v * c)
    }

    /// Strict containment test.
    pub fn contains(&self, p: Point) -> bool {
        let (u, v) = self.to_local(p);
        u.abs() < 0.5 * self.w && v.abs() < 0.5 * self.h
    }

    /// Total order on the raw parameters, used for deterministic tie-breaks.
    pub fn total_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

impl<'de> Deserialize<'de> for RBoxCenter {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            cx: f64,
            cy: f64,
            w: f64,
            h: f64,
            theta: f64,
        }
        let raw = Raw::deserialize(de)?;
        RBoxCenter::new(raw.cx, raw.cy, raw.w, raw.h, raw.theta).map_err(serde::de::Error::custom)
    }
}

/// Box expressed relative to a grid point: distances to the left, top,
/// right and bottom edges (measured along the box's own axes) plus the
/// orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RBoxDist {
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
    pub theta: f64,
}

impl RBoxDist {
    pub const fn new(l: f64, t: f64, r: f64, b: f64, theta: f64) -> Self {
        Self { l, t, r, b, theta }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.l, self.t, self.r, self.b, self.theta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }
}

/// Four vertices with positive signed shoelace area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadBox {
    pub pts: [Point; 4],
}

impl QuadBox {
    pub fn new(pts: [Point; 4]) -> Self {
        Self { pts }
    }

    pub fn signed_area(&self) -> f64 {
        polygon_area(&self.pts)
    }

    /// Flattened `[x1, y1, ..., x4, y4]`.
    pub fn to_coords(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, p) in self.pts.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    pub fn from_coords(c: [f64; 8]) -> Self {
        Self::new([
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ])
    }
}

/// Converts grid-relative distances to a center box.
///
/// Evaluates `Gamma * (l, t, r, b, theta, 1)^T` where the first two rows of
/// `Gamma` are
///
/// ```text
/// [-cos/2,  sin/2, cos/2, -sin/2, 0, gx]
/// [-sin/2, -cos/2, sin/2,  cos/2, 0, gy]
/// ```
///
/// and the remaining rows give `w = l + r`, `h = t + b` and `theta`.
pub fn dist_to_center(d: &RBoxDist, gx: f64, gy: f64) -> Result<RBoxCenter, GeometryError> {
    let horizontal = d.l + d.r;
    let vertical = d.t + d.b;
    if !(d.l.is_finite() && d.t.is_finite() && d.r.is_finite() && d.b.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if horizontal <= 0.0 || vertical <= 0.0 {
        return Err(GeometryError::DegenerateDistances {
            horizontal,
            vertical,
        });
    }
    let (s, c) = d.theta.sin_cos();
    let cx = gx + 0.5 * (-c * d.l + s * d.t + c * d.r - s * d.b);
    let cy = gy + 0.5 * (-s * d.l - c * d.t + s * d.r + c * d.b);
    RBoxCenter::new(cx, cy, horizontal, vertical, d.theta)
}

/// Inverse of [`dist_to_center`] for a grid point strictly inside the box.
pub fn center_to_dist(bx: &RBoxCenter, gx: f64, gy: f64) -> Result<RBoxDist, GeometryError> {
    let p = Point::new(gx, gy);
    if !bx.contains(p) {
        return Err(GeometryError::PointOutside { x: gx, y: gy });
    }
    let (u, v) = bx.to_local(p);
    let hw = 0.5 * bx.w;
    let hh = 0.5 * bx.h;
    Ok(RBoxDist::new(hw + u, hh + v, hw - u, hh - v, bx.theta))
}

/// Corners of the box in the order `(-w/2,-h/2), (w/2,-h/2), (w/2,h/2),
/// (-w/2,h/2)` in the box frame; the signed shoelace area is `w * h`.
pub fn box_vertices(bx: &RBoxCenter) -> QuadBox {
    let hw = 0.5 * bx.w;
    let hh = 0.5 * bx.h;
    QuadBox::new([
        bx.to_image(-hw, -hh),
        bx.to_image(hw, -hh),
        bx.to_image(hw, hh),
        bx.to_image(-hw, hh),
    ])
}

/// Signed shoelace area; positive for the vertex order used by
/// [`box_vertices`].
pub fn polygon_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    0.5 * acc
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland-Hodgman clipping of `subject` against the convex polygon
/// `clip`. Both must have positive orientation.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_side = cross(e0, e1, cur);
            let prev_side = cross(e0, e1, prev);
            let cur_in = cur_side >= -CLIP_EPS;
            let prev_in = prev_side >= -CLIP_EPS;
            if cur_in {
                if !prev_in {
                    output.push(segment_cross(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_cross(prev, cur, prev_side, cur_side));
            }
        }
    }
    output
}

fn segment_cross(p: Point, q: Point, side_p: f64, side_q: f64) -> Point {
    let denom = side_p - side_q;
    if denom.abs() < f64::MIN_POSITIVE {
        return p;
    }
    let t = side_p / denom;
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Area of the intersection of two rotated boxes.
pub fn intersection_area(a: &RBoxCenter, b: &RBoxCenter) -> f64 {
    let ra = 0.5 * a.w.hypot(a.h);
    let rb = 0.5 * b.w.hypot(b.h);
    if (a.cx - b.cx).hypot(a.cy - b.cy) > ra + rb {
        return 0.0;
    }
    let pa = box_vertices(a);
    let pb = box_vertices(b);
    polygon_area(&clip_convex(&pa.pts, &pb.pts)).max(0.0)
}

/// Exact intersection-over-union of two rotated boxes.
///
/// The arguments are put in a fixed order before clipping so the result is
/// bitwise symmetric.
pub fn rotated_iou(a: &RBoxCenter, b: &RBoxCenter) -> f64 {
    let (a, b) = if a.total_cmp(b).is_le() {
        (a, b)
    } else {
        (b, a)
    };
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Convex hull (monotone chain) with positive orientation.
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area rotated rectangle enclosing a quadrilateral.
///
/// Of the two equivalent `(w, h, theta)` parameterizations of the result,
/// the one whose width axis is closest to the first edge `p1 -> p2` is
/// returned, so reading direction maps to `w`.
pub fn quad_to_rbox(q: &QuadBox) -> Result<RBoxCenter, GeometryError> {
    if q.pts.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let hull = convex_hull(&q.pts);
    if hull.len() < 3 || polygon_area(&hull) <= 0.0 {
        return Err(GeometryError::DegenerateQuad);
    }
    let mut best: Option<(f64, f64, f64, f64, f64, f64)> = None;
    for i in 0..hull.len() {
        let e0 = hull[i];
        let e1 = hull[(i + 1) % hull.len()];
        let len = (e1.x - e0.x).hypot(e1.y - e0.y);
        if len <= 0.0 {
            continue;
        }
        let (ux, uy) = ((e1.x - e0.x) / len, (e1.y - e0.y) / len);
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let u = p.x * ux + p.y * uy;
            let v = -p.x * uy + p.y * ux;
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.is_none_or(|b| area < b.0 - 1e-12 * area.abs().max(1.0)) {
            best = Some((area, uy.atan2(ux), umin, umax, vmin, vmax));
        }
    }
    let (_, ang, umin, umax, vmin, vmax) = best.ok_or(GeometryError::DegenerateQuad)?;
    let (uc, vc) = (0.5 * (umin + umax), 0.5 * (vmin + vmax));
    let (s, c) = ang.sin_cos();
    let cx = uc * c - vc * s;
    let cy = uc * s + vc * c;
    let (w, h) = (umax - umin, vmax - vmin);

    let first = (q.pts[1].y - q.pts[0].y).atan2(q.pts[1].x - q.pts[0].x);
    let swapped = angle_diff(first, ang + FRAC_PI_2).abs() < angle_diff(first, ang).abs();
    if swapped {
        RBoxCenter::new(cx, cy, h, w, ang + FRAC_PI_2)
    } else {
        RBoxCenter::new(cx, cy, w, h, ang)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rb(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> RBoxCenter {
        RBoxCenter::new(cx, cy, w, h, t).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn dist_to_center_axis_aligned() {
        let b = dist_to_center(&RBoxDist::new(3.0, 2.0, 5.0, 4.0, 0.0), 10.0, 20.0).unwrap();
        assert_eq!(b.to_array(), [11.0, 21.0, 8.0, 6.0, 0.0]);
    }

    #[test]
    fn dist_to_center_quarter_turn_matches_offset_rotation() {
        // oracle: center = g + R(theta) * ((r - l) / 2, (b - t) / 2)
        let (l, t, r, b, th) = (3.0, 2.0, 5.0, 4.0, FRAC_PI_2);
        let (u, v) = ((r - l) / 2.0, (b - t) / 2.0);
        let ox = 10.0 + u * th.cos() - v * th.sin();
        let oy = 20.0 + u * th.sin() + v * th.cos();
        assert!(close(ox, 9.0, 1e-12) && close(oy, 21.0, 1e-12));

        let got = dist_to_center(&RBoxDist::new(l, t, r, b, th), 10.0, 20.0).unwrap();
        assert!(close(got.cx(), 9.0, 1e-12));
        assert!(close(got.cy(), 21.0, 1e-12));
        assert_eq!((got.w(), got.h()), (8.0, 6.0));
        assert!(close(got.theta(), FRAC_PI_2, 1e-15));
    }

    #[test]
    fn symmetric_distances_land_on_grid_point() {
        for th in [-0.7, 0.0, 0.3, 1.2, 2.3] {
            let b = dist_to_center(&RBoxDist::new(4.0, 4.0, 4.0, 4.0, th), 7.0, -3.0).unwrap();
            assert!(close(b.cx(), 7.0, 1e-12) && close(b.cy(), -3.0, 1e-12));
            assert_eq!((b.w(), b.h()), (8.0, 8.0));
        }
    }

    #[test]
    fn dist_to_center_rejects_degenerate() {
        assert!(matches!(
            dist_to_center(&RBoxDist::new(0.0, 1.0, 0.0, 1.0, 0.0), 0.0, 0.0),
            Err(GeometryError::DegenerateDistances { .. })
        ));
        assert!(dist_to_center(&RBoxDist::new(1.0, 0.0, 1.0, 0.0, 0.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn center_to_dist_examples() {
        let d = center_to_dist(&rb(11.0, 21.0, 8.0, 6.0, 0.0), 10.0, 20.0).unwrap();
        assert_eq!(d.to_array(), [3.0, 2.0, 5.0, 4.0, 0.0]);
        let bx = rb(5.0, 6.0, 10.0, 4.0, 1.0);
        let d = center_to_dist(&bx, 5.0, 6.0).unwrap();
        assert_eq!(d.to_array(), [5.0, 2.0, 5.0, 2.0, 1.0]);
        assert!(matches!(
            center_to_dist(&bx, 50.0, 6.0),
            Err(GeometryError::PointOutside { .. })
        ));
    }

    #[test]
    fn vertices_examples() {
        let q = box_vertices(&rb(0.0, 0.0, 2.0, 4.0, 0.0));
        let want = [(-1.0, -2.0), (1.0, -2.0), (1.0, 2.0), (-1.0, 2.0)];
        for (p, w) in q.pts.iter().zip(want) {
            assert_eq!((p.x, p.y), w);
        }
        let mut a: Vec<(i64, i64)> = box_vertices(&rb(0.0, 0.0, 2.0, 4.0, FRAC_PI_2))
            .pts
            .iter()
            .map(|p| ((p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64))
            .collect();
        let mut b: Vec<(i64, i64)> = box_vertices(&rb(0.0, 0.0, 4.0, 2.0, 0.0))
            .pts
            .iter()
            .map(|p| ((p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64))
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn iou_basic_cases() {
        let a = rb(0.0, 0.0, 10.0, 10.0, 0.0);
        assert_eq!(rotated_iou(&a, &a), 1.0);
        assert_eq!(rotated_iou(&a, &rb(100.0, 0.0, 10.0, 10.0, 0.0)), 0.0);
        let half = rb(5.0, 0.0, 10.0, 10.0, 0.0);
        assert!(close(rotated_iou(&a, &half), 1.0 / 3.0, 1e-12));
        let sq = rb(0.0, 0.0, 1.0, 1.0, 0.0);
        let diamond = rb(0.0, 0.0, 1.0, 1.0, FRAC_PI_4);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!(close(
            rotated_iou(&sq, &diamond),
            inter / (2.0 - inter),
            1e-12
        ));
    }

    #[test]
    fn iou_contained_box() {
        let big = rb(0.0, 0.0, 10.0, 10.0, 0.3);
        let small = rb(0.0, 0.0, 2.0, 3.0, 1.1);
        assert!(close(rotated_iou(&big, &small), 6.0 / 100.0, 1e-12));
    }

    #[test]
    fn angle_diff_wraps() {
        assert_eq!(angle_diff(0.4, 0.4), 0.0);
        let d = angle_diff(3.0 * FRAC_PI_4 - 0.01, -FRAC_PI_4);
        // brute force over k in -2..=2
        let raw = 3.0 * FRAC_PI_4 - 0.01 + FRAC_PI_4;
        let best = (-2..=2)
            .map(|k| raw + k as f64 * PI)
            .filter(|x| (-FRAC_PI_2..FRAC_PI_2).contains(x))
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap();
        assert!(close(best, -0.01, 1e-12));
        assert!(close(d, best, 1e-12));
        assert_eq!(angle_diff(FRAC_PI_2, 0.0), -FRAC_PI_2);
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(0.2), 0.2);
        assert!(close(normalize_angle(PI + 0.2), 0.2, 1e-12));
        assert!(close(normalize_angle(3.0 * FRAC_PI_4), -FRAC_PI_4, 1e-12));
        assert_eq!(normalize_angle(-FRAC_PI_4), -FRAC_PI_4);
    }

    #[test]
    fn box_rejects_invalid() {
        assert!(RBoxCenter::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(RBoxCenter::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        assert!(RBoxCenter::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn quad_to_rbox_recovers_rectangles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let bx = rb(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(5.0..60.0),
                rng.gen_range(5.0..60.0),
                rng.gen_range(-1.0..3.0),
            );
            let got = quad_to_rbox(&box_vertices(&bx)).unwrap();
            assert!(rotated_iou(&bx, &got) > 1.0 - 1e-9);
            assert!(close(got.w(), bx.w(), 1e-9) && close(got.h(), bx.h(), 1e-9));
            assert!(angle_diff(got.theta(), bx.theta()).abs() < 1e-9);
        }
    }

    #[test]
    fn quad_to_rbox_on_icdar_order() {
        // clockwise on screen (y down), first edge along the reading direction
        let q = QuadBox::from_coords([0.0, 0.0, 40.0, 0.0, 40.0, 10.0, 0.0, 10.0]);
        let b = quad_to_rbox(&q).unwrap();
        assert!(close(b.cx(), 20.0, 1e-12) && close(b.cy(), 5.0, 1e-12));
        assert!(close(b.w(), 40.0, 1e-12) && close(b.h(), 10.0, 1e-12));
        assert!(close(b.theta(), 0.0, 1e-12));
        let flat = QuadBox::from_coords([0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert_eq!(quad_to_rbox(&flat), Err(GeometryError::DegenerateQuad));
    }
}
