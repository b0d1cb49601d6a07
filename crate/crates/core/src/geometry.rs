//! Oriented rectangles and convex-polygon utilities.
//!
//! All coordinates are in pixel space: `x` runs along columns, `y` along rows
//! (downwards), and the center of pixel `(row, col)` sits at `(col, row)`.
//! Angles are radians measured from the +x axis towards +y.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// A rectangle of size `w` x `h` centered at `(cx, cy)`.
///
/// The `w` side runs along `(cos theta, sin theta)`, the `h` side along
/// `(-sin theta, cos theta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        OrientedBox { cx, cy, w, h, theta }
    }

    pub fn axis_aligned(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        OrientedBox::new(cx, cy, w, h, 0.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn aspect(&self) -> f64 {
        let (long, short) = self.sides();
        if short <= 0.0 {
            f64::INFINITY
        } else {
            long / short
        }
    }

    /// `(long, short)` side lengths.
    pub fn sides(&self) -> (f64, f64) {
        if self.w >= self.h {
            (self.w, self.h)
        } else {
            (self.h, self.w)
        }
    }

    pub fn axes(&self) -> (Point, Point) {
        let (s, c) = self.theta.sin_cos();
        ([c, s], [-s, c])
    }

    /// Corners in counter-clockwise order (positive shoelace area).
    pub fn corners(&self) -> [Point; 4] {
        let (u, v) = self.axes();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        let at = |a: f64, b: f64| [self.cx + u[0] * a + v[0] * b, self.cy + u[1] * a + v[1] * b];
        [at(-hw, -hh), at(hw, -hh), at(hw, hh), at(-hw, hh)]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        const EPS: f64 = 1e-9;
        let (u, v) = self.axes();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * u[0] + dy * u[1]).abs() <= self.w / 2.0 + EPS
            && (dx * v[0] + dy * v[1]).abs() <= self.h / 2.0 + EPS
    }

    /// Same rectangle with `w >= h` and `theta` in `[-pi/2, pi/2)`.
    pub fn canonical(&self) -> OrientedBox {
        let mut b = *self;
        if b.w < b.h {
            std::mem::swap(&mut b.w, &mut b.h);
            b.theta += PI / 2.0;
        }
        b.theta = normalize_half_turn(b.theta);
        b
    }

    /// True when both boxes describe the same point set (up to `tol`).
    pub fn same_region(&self, other: &OrientedBox, tol: f64) -> bool {
        let a = self.canonical();
        let b = other.canonical();
        let dtheta = normalize_half_turn(a.theta - b.theta).abs();
        // a square is invariant under quarter turns
        let dtheta = if (a.w - a.h).abs() <= tol {
            dtheta.min((PI / 2.0 - dtheta).abs())
        } else {
            dtheta
        };
        (a.cx - b.cx).abs() <= tol
            && (a.cy - b.cy).abs() <= tol
            && (a.w - b.w).abs() <= tol
            && (a.h - b.h).abs() <= tol
            && dtheta <= tol
    }

    pub fn intersection_area(&self, other: &OrientedBox) -> f64 {
        let a = self.corners();
        let b = other.corners();
        // cheap reject on circumscribed circles
        let ra = 0.5 * (self.w * self.w + self.h * self.h).sqrt();
        let rb = 0.5 * (other.w * other.w + other.h * other.h).sqrt();
        let d2 = (self.cx - other.cx).powi(2) + (self.cy - other.cy).powi(2);
        if d2 > (ra + rb) * (ra + rb) {
            return 0.0;
        }
        polygon_area(&clip_convex(&a, &b)).abs()
    }

    pub fn iou(&self, other: &OrientedBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Intersection divided by the area of `reference`.
    pub fn ioa(&self, reference: &OrientedBox) -> f64 {
        let area = reference.area();
        if area <= 0.0 {
            0.0
        } else {
            self.intersection_area(reference) / area
        }
    }

    /// Serialised form `[cx, cy, w, h, theta_deg]`.
    pub fn to_array_deg(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta.to_degrees()]
    }

    pub fn from_array_deg(a: [f64; 5]) -> Self {
        OrientedBox::new(a[0], a[1], a[2], a[3], a[4].to_radians())
    }
}

/// Maps an angle into `[-pi/2, pi/2)`.
pub fn normalize_half_turn(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(PI);
    if t >= PI / 2.0 {
        t -= PI;
    }
    if t.abs() < 1e-12 {
        0.0
    } else {
        t
    }
}

/// Signed shoelace area; positive for counter-clockwise order.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc / 2.0
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            let p_in = dp >= 0.0;
            let q_in = dq >= 0.0;
            if p_in {
                output.push(p);
            }
            if p_in != q_in {
                let t = dp / (dp - dq);
                output.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    output
}

/// Andrew's monotone chain; returns the hull counter-clockwise without
/// repeating the first point. Collinear points are dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle of a convex hull (rotating calipers over
/// the hull edges). The result is canonical (`w >= h`).
pub fn min_area_rect(hull: &[Point]) -> Option<OrientedBox> {
    match hull.len() {
        0 => return None,
        1 => return Some(OrientedBox::axis_aligned(hull[0][0], hull[0][1], 0.0, 0.0)),
        _ => {}
    }
    let mut best: Option<(f64, OrientedBox)> = None;
    for i in 0..hull.len() {
        let p = hull[i];
        let q = hull[(i + 1) % hull.len()];
        let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
        let len = (ex * ex + ey * ey).sqrt();
        if len == 0.0 {
            continue;
        }
        let u = [ex / len, ey / len];
        let v = [-u[1], u[0]];
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for h in hull {
            let a = h[0] * u[0] + h[1] * u[1];
            let b = h[0] * v[0] + h[1] * v[1];
            umin = umin.min(a);
            umax = umax.max(a);
            vmin = vmin.min(b);
            vmax = vmax.max(b);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().is_none_or(|(a, _)| area < *a - 1e-9) {
            let mu = (umin + umax) / 2.0;
            let mv = (vmin + vmax) / 2.0;
            let cx = u[0] * mu + v[0] * mv;
            let cy = u[1] * mu + v[1] * mv;
            let b = OrientedBox::new(cx, cy, umax - umin, vmax - vmin, ey.atan2(ex));
            best = Some((area, b));
        }
    }
    best.map(|(_, b)| snap(b.canonical()))
}

// Removes floating noise from the calipers output so that axis-aligned
// pixel rectangles come out with exact integer sides.
fn snap(b: OrientedBox) -> OrientedBox {
    let r = |x: f64| {
        let s = (x * 1e9).round() / 1e9;
        if s == 0.0 {
            0.0
        } else {
            s
        }
    };
    OrientedBox::new(r(b.cx), r(b.cy), r(b.w), r(b.h), r(b.theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_boxes_have_unit_iou() {
        let b = OrientedBox::new(3.0, 4.0, 10.0, 4.0, 0.3);
        assert!((b.iou(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_boxes_do_not_intersect() {
        let a = OrientedBox::axis_aligned(0.0, 0.0, 2.0, 2.0);
        let b = OrientedBox::axis_aligned(10.0, 0.0, 2.0, 2.0);
        assert_eq!(a.intersection_area(&b), 0.0);
    }

    #[test]
    fn rotated_square_overlap() {
        // unit square vs the same square turned 45 degrees: regular octagon
        let a = OrientedBox::axis_aligned(0.0, 0.0, 2.0, 2.0);
        let b = OrientedBox::new(0.0, 0.0, 2.0, 2.0, PI / 4.0);
        let octagon = 8.0 * (2.0f64.sqrt() - 1.0);
        assert!((a.intersection_area(&b) - octagon).abs() < 1e-12);
    }

    #[test]
    fn nested_box_ioa() {
        let big = OrientedBox::axis_aligned(0.0, 0.0, 20.0, 6.0);
        let small = OrientedBox::axis_aligned(0.0, 0.0, 10.0, 4.0);
        assert!((small.ioa(&small) - 1.0).abs() < 1e-12);
        assert!((big.ioa(&small) - 1.0).abs() < 1e-12);
        assert!((small.ioa(&big) - 40.0 / 120.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_swaps_sides() {
        let b = OrientedBox::new(0.0, 0.0, 4.0, 10.0, 0.0).canonical();
        assert_eq!((b.w, b.h), (10.0, 4.0));
        assert!((b.theta + PI / 2.0).abs() < 1e-12);
        assert!(b.same_region(&OrientedBox::new(0.0, 0.0, 4.0, 10.0, 0.0), 1e-9));
    }

    #[test]
    fn hull_of_rectangle_pixels() {
        let mut pts = Vec::new();
        for r in 0..4 {
            for c in 0..10 {
                for (dx, dy) in [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)] {
                    pts.push([c as f64 + dx, r as f64 + dy]);
                }
            }
        }
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!((polygon_area(&hull) - 40.0).abs() < 1e-12);
        let rect = min_area_rect(&hull).unwrap();
        assert_eq!((rect.w, rect.h, rect.theta), (10.0, 4.0, 0.0));
        assert_eq!((rect.cx, rect.cy), (4.5, 1.5));
    }

    #[test]
    fn min_rect_of_rotated_points() {
        let b = OrientedBox::new(5.0, 5.0, 8.0, 3.0, 0.4);
        let rect = min_area_rect(&convex_hull(&b.corners())).unwrap();
        assert!(rect.same_region(&b, 1e-6), "{rect:?}");
    }
}
