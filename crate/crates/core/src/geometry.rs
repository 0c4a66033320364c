//! Planar geometry used by the path tracer.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Vec2,
    pub end: Vec2,
}

impl Segment {
    pub fn new(start: Vec2, end: Vec2) -> Self {
        Self { start, end }
    }

    pub fn is_degenerate(&self) -> bool {
        self.start == self.end
    }

    /// Mirror image of `p` across the infinite line through this segment.
    pub fn reflect(&self, p: Vec2) -> Vec2 {
        let d = self.end - self.start;
        let t = (p - self.start).dot(d) / d.dot(d);
        let foot = self.start + d * t;
        foot * 2.0 - p
    }

    /// Signed side of `p` relative to the directed line start→end.
    pub fn side(&self, p: Vec2) -> f64 {
        (self.end - self.start).cross(p - self.start)
    }

    /// Intersection of the segment `a→b` with this segment, as the point and
    /// the parameter along `a→b`. Parallel segments never intersect.
    pub fn intersect(&self, a: Vec2, b: Vec2) -> Option<(Vec2, f64)> {
        let r = b - a;
        let s = self.end - self.start;
        let denom = r.cross(s);
        if denom.abs() < 1e-15 {
            return None;
        }
        let qp = self.start - a;
        let t = qp.cross(s) / denom;
        let u = qp.cross(r) / denom;
        if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
            Some((a + r * t, t))
        } else {
            None
        }
    }

    /// True when the open segment `a→b` crosses this segment. Touching at the
    /// very endpoints of `a→b` does not count, so a path ending on a reflector
    /// is not blocked by it.
    pub fn blocks(&self, a: Vec2, b: Vec2) -> bool {
        const EPS: f64 = 1e-9;
        matches!(self.intersect(a, b), Some((_, t)) if t > EPS && t < 1.0 - EPS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_across_horizontal_wall() {
        let wall = Segment::new(Vec2::new(-10.0, 3.0), Vec2::new(10.0, 3.0));
        assert_eq!(wall.reflect(Vec2::new(0.0, 0.0)), Vec2::new(0.0, 6.0));
    }

    #[test]
    fn crossing_segments_intersect() {
        let s = Segment::new(Vec2::new(1.0, -1.0), Vec2::new(1.0, 1.0));
        let (p, t) = s.intersect(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)).unwrap();
        assert_eq!(p, Vec2::new(1.0, 0.0));
        assert!((t - 0.5).abs() < 1e-12);
        assert!(s.blocks(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)));
        assert!(!s.blocks(Vec2::new(0.0, 0.0), Vec2::new(0.5, 0.0)));
    }

    #[test]
    fn parallel_segments_do_not_intersect() {
        let s = Segment::new(Vec2::new(0.0, 1.0), Vec2::new(2.0, 1.0));
        assert!(s.intersect(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)).is_none());
    }
}
