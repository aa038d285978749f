//! Planar geometry primitives shared across the stack: vectors, oriented
//! boxes, and convex polygon intersection / separation distances.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// 2-D vector / point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at the given heading (rad, CCW from +x).
    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Left-hand normal (rotation by +90 deg).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r -= 2.0 * std::f64::consts::PI;
    } else if r <= -std::f64::consts::PI {
        r += 2.0 * std::f64::consts::PI;
    }
    r
}

/// Oriented rectangle: center, heading of the long axis, half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
}

impl Obb {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Obb {
            center,
            heading,
            half_len: 0.5 * length,
            half_wid: 0.5 * width,
        }
    }

    /// Corner points in CCW order.
    pub fn corners(&self) -> [Vec2; 4] {
        let u = Vec2::from_angle(self.heading);
        let v = u.perp();
        let l = u * self.half_len;
        let w = v * self.half_wid;
        [
            self.center + l + w,
            self.center - l + w,
            self.center - l - w,
            self.center + l - w,
        ]
    }
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) - 1e-12
        && p.x <= a.x.max(b.x) + 1e-12
        && p.y >= a.y.min(b.y) - 1e-12
        && p.y <= a.y.max(b.y) + 1e-12
}

/// Segment-segment intersection including touching endpoints and collinear
/// overlap.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Distance from a point to a segment.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Distance between two segments (0 when they intersect).
pub fn segment_segment_distance(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Point-in-polygon via the even-odd rule. Works for any simple polygon.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if ((pi.y > p.y) != (pj.y > p.y))
            && p.x < (pj.x - pi.x) * (p.y - pi.y) / (pj.y - pi.y) + pi.x
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// True when two simple polygons overlap (boundary contact counts).
pub fn polygons_intersect(a: &[Vec2], b: &[Vec2]) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    let na = a.len();
    let nb = b.len();
    for i in 0..na {
        let (a0, a1) = (a[i], a[(i + 1) % na]);
        for j in 0..nb {
            let (b0, b1) = (b[j], b[(j + 1) % nb]);
            if segments_intersect(a0, a1, b0, b1) {
                return true;
            }
        }
    }
    point_in_polygon(a[0], b) || point_in_polygon(b[0], a)
}

/// Separation distance between two simple polygons; 0 when overlapping.
pub fn polygon_distance(a: &[Vec2], b: &[Vec2]) -> f64 {
    if polygons_intersect(a, b) {
        return 0.0;
    }
    let na = a.len();
    let nb = b.len();
    let mut best = f64::INFINITY;
    for i in 0..na {
        let (a0, a1) = (a[i], a[(i + 1) % na]);
        for j in 0..nb {
            let (b0, b1) = (b[j], b[(j + 1) % nb]);
            best = best.min(segment_segment_distance(a0, a1, b0, b1));
        }
    }
    best
}

/// Arc length of a polyline.
pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Point at arc-length `s` along a polyline, clamped to its ends.
pub fn polyline_point_at(pts: &[Vec2], s: f64) -> Vec2 {
    if pts.is_empty() {
        return Vec2::ZERO;
    }
    if s <= 0.0 {
        return pts[0];
    }
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = w[0].dist(w[1]);
        if acc + seg >= s && seg > 0.0 {
            let t = (s - acc) / seg;
            return w[0] + (w[1] - w[0]) * t;
        }
        acc += seg;
    }
    *pts.last().unwrap()
}

/// Tangent heading at arc-length `s` along a polyline.
pub fn polyline_heading_at(pts: &[Vec2], s: f64) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = w[0].dist(w[1]);
        if (acc + seg >= s && seg > 0.0) || acc + seg >= polyline_length(pts) {
            return (w[1] - w[0]).angle();
        }
        acc += seg;
    }
    let n = pts.len();
    (pts[n - 1] - pts[n - 2]).angle()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn obb_corners_axis_aligned() {
        let b = Obb::new(Vec2::new(1.0, 2.0), 0.0, 4.0, 2.0);
        let c = b.corners();
        assert_eq!(c[0], Vec2::new(3.0, 3.0));
        assert_eq!(c[2], Vec2::new(-1.0, 1.0));
    }

    #[test]
    fn disjoint_boxes_have_positive_distance() {
        let a = Obb::new(Vec2::ZERO, 0.0, 2.0, 2.0).corners();
        let b = Obb::new(Vec2::new(5.0, 0.0), 0.0, 2.0, 2.0).corners();
        assert!(!polygons_intersect(&a, &b));
        let d = polygon_distance(&a, &b);
        assert!((d - 3.0).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn overlapping_boxes_distance_zero() {
        let a = Obb::new(Vec2::ZERO, 0.0, 2.0, 2.0).corners();
        let b = Obb::new(Vec2::new(1.5, 0.0), 0.785, 2.0, 2.0).corners();
        assert!(polygons_intersect(&a, &b));
        assert_eq!(polygon_distance(&a, &b), 0.0);
    }

    #[test]
    fn contained_polygon_intersects() {
        let outer = Obb::new(Vec2::ZERO, 0.0, 10.0, 10.0).corners();
        let inner = Obb::new(Vec2::ZERO, 0.3, 1.0, 1.0).corners();
        assert!(polygons_intersect(&outer, &inner));
    }

    #[test]
    fn rotated_box_distance_matches_hand_value() {
        // 45 deg box whose nearest corner is at x = 5 - sqrt(2).
        let a = Obb::new(Vec2::ZERO, 0.0, 2.0, 2.0).corners();
        let b = Obb::new(
            Vec2::new(5.0, 0.0),
            std::f64::consts::FRAC_PI_4,
            2.0,
            2.0,
        )
        .corners();
        let expect = 5.0 - 1.0 - 2.0f64.sqrt();
        assert!((polygon_distance(&a, &b) - expect).abs() < 1e-9);
    }

    #[test]
    fn point_in_polygon_basic() {
        let sq = Obb::new(Vec2::ZERO, 0.0, 2.0, 2.0).corners();
        assert!(point_in_polygon(Vec2::new(0.5, 0.5), &sq));
        assert!(!point_in_polygon(Vec2::new(1.5, 0.0), &sq));
    }

    #[test]
    fn polyline_sampling() {
        let pts = [Vec2::ZERO, Vec2::new(3.0, 0.0), Vec2::new(3.0, 4.0)];
        assert!((polyline_length(&pts) - 7.0).abs() < 1e-12);
        assert_eq!(polyline_point_at(&pts, 3.0), Vec2::new(3.0, 0.0));
        assert_eq!(polyline_point_at(&pts, 5.0), Vec2::new(3.0, 2.0));
        assert!((polyline_heading_at(&pts, 5.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(polyline_point_at(&pts, 99.0), Vec2::new(3.0, 4.0));
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.5), 0.5);
    }
}
