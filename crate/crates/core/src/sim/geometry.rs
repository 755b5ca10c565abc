//! Oriented rectangles and rays in the plane.

/// A vehicle footprint: center, heading (radians, counter-clockwise from +x),
/// length along the heading and width across it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Rect {
    fn axes(&self) -> ((f64, f64), (f64, f64)) {
        let (s, c) = self.heading.sin_cos();
        ((c, s), (-s, c))
    }

    /// Point in the rectangle's own frame (x along the heading).
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let ((fx, fy), (lx, ly)) = self.axes();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * fx + dy * fy, dx * lx + dy * ly)
    }

    /// Closed containment test with a small tolerance for rotated edges.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.to_local(x, y);
        u.abs() <= self.length / 2.0 + 1e-9 && v.abs() <= self.width / 2.0 + 1e-9
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let ((fx, fy), (lx, ly)) = self.axes();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(a, b)| (self.cx + a * fx + b * lx, self.cy + a * fy + b * ly))
    }

    /// Separating-axis overlap test (touching counts as overlap).
    pub fn overlaps(&self, other: &Rect) -> bool {
        let (a1, a2) = self.axes();
        let (b1, b2) = other.axes();
        let ca = self.corners();
        let cb = other.corners();
        for axis in [a1, a2, b1, b2] {
            let proj = |cs: &[(f64, f64); 4]| {
                cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
                    let p = x * axis.0 + y * axis.1;
                    (lo.min(p), hi.max(p))
                })
            };
            let (alo, ahi) = proj(&ca);
            let (blo, bhi) = proj(&cb);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
        true
    }

    /// Distance along the ray `origin + t * (dx, dy)` (unit direction) to the
    /// first boundary crossing, if any with `t >= 0`.
    pub fn ray_hit(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        let (u0, v0) = self.to_local(ox, oy);
        let ((fx, fy), (lx, ly)) = self.axes();
        let du = dx * fx + dy * fy;
        let dv = dx * lx + dy * ly;
        let mut t_lo = f64::NEG_INFINITY;
        let mut t_hi = f64::INFINITY;
        for (p, d, half) in [(u0, du, self.length / 2.0), (v0, dv, self.width / 2.0)] {
            if d.abs() < 1e-12 {
                if p.abs() > half {
                    return None;
                }
            } else {
                let t1 = (-half - p) / d;
                let t2 = (half - p) / d;
                t_lo = t_lo.max(t1.min(t2));
                t_hi = t_hi.min(t1.max(t2));
            }
        }
        if t_hi < t_lo || t_hi < 0.0 {
            return None;
        }
        Some(t_lo.max(0.0))
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
