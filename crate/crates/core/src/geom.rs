//! Small planar geometry helpers in pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// Polyline with an identifier; at least two points, consecutive points
/// distinct, all coordinates finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub id: String,
    pub points: Vec<Point>,
}

impl Polyline {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let line = Self {
            id: id.into(),
            points,
        };
        line.validate()?;
        Ok(line)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidGeometry(format!(
                "polyline {:?} has fewer than 2 points",
                self.id
            )));
        }
        if self.points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "polyline {:?} has non-finite coordinates",
                self.id
            )));
        }
        if self.points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGeometry(format!(
                "polyline {:?} repeats a point",
                self.id
            )));
        }
        Ok(())
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| dist(a, b)).sum()
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        )
    }

    /// Point at arc length `s` from the start, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Point {
        let mut left = s.max(0.0);
        for (a, b) in self.segments() {
            let l = dist(a, b);
            if left <= l {
                let t = if l > 0.0 { left / l } else { 0.0 };
                return lerp(a, b, t);
            }
            left -= l;
        }
        *self.points.last().unwrap()
    }

    /// Distance from `p` to the nearest point of the polyline.
    pub fn distance_to(&self, p: Point) -> f64 {
        self.segments()
            .map(|(a, b)| point_segment_dist2(p, a, b))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    /// Apply `f` to every vertex, dropping vertices that collapse onto
    /// their predecessor.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Self {
        let mut points: Vec<Point> = Vec::with_capacity(self.points.len());
        for &p in &self.points {
            let q = f(p);
            if points.last() != Some(&q) {
                points.push(q);
            }
        }
        Self {
            id: self.id.clone(),
            points,
        }
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn lerp(a: Point, b: Point, t: f64) -> Point {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

/// Squared distance from `p` to segment `ab` (round caps).
pub fn point_segment_dist2(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

/// Closest point on segment `ab` to `p` and its parameter `t` in `[0, 1]`.
pub fn project_on_segment(p: Point, a: Point, b: Point) -> (Point, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((a.0 + t * dx, a.1 + t * dy), t)
}

/// Ramer–Douglas–Peucker simplification keeping both endpoints.
pub fn simplify(points: &[Point], tolerance: f64) -> Vec<Point> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0usize, points.len() - 1)];
    let tol2 = tolerance * tolerance;
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (mut best, mut best_d) = (lo, -1.0);
        for i in lo + 1..hi {
            let d = point_segment_dist2(points[i], points[lo], points[hi]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > tol2 {
            keep[best] = true;
            stack.push((lo, best));
            stack.push((best, hi));
        }
    }
    points
        .iter()
        .zip(keep)
        .filter_map(|(&p, k)| k.then_some(p))
        .collect()
}

pub fn arc_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}
