//! 2D / 2.5D geometry kernel.
//!
//! Lengths are millimetres, angles radians, everything `f64`. Polygons keep
//! their outer ring counter-clockwise and holes clockwise, so the material of
//! a region is always on the left of every directed edge.

mod boolean;
mod part;
mod partfile;

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boolean::{polygon_bool, BoolOp};
pub use part::{cross_section, geometric_center, Family, Part, Region, ShaftHole};
pub use partfile::{hole_ring, part_from_str, part_to_string, read_part, write_part};

/// Coincidence tolerance for geometric predicates, in mm.
pub const EPS: f64 = 1e-9;

/// Rings whose absolute area is below this (mm²) are treated as degenerate.
pub const AREA_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has zero or negative area")]
    Degenerate,
    #[error("polygon ring self-intersects")]
    SelfIntersecting,
    #[error("invalid part: {0}")]
    InvalidPart(String),
    #[error("part file parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        Point2::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r -= 2.0 * PI;
    }
    r
}

/// Planar rigid transform: rotate by `angle`, then translate by `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Transform2 {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
}

impl Transform2 {
    pub const IDENTITY: Transform2 = Transform2 { x: 0.0, y: 0.0, angle: 0.0 };

    pub fn new(x: f64, y: f64, angle: f64) -> Self {
        Transform2 { x, y, angle }
    }

    pub fn translation(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        p.rotate(self.angle) + self.translation()
    }

    pub fn apply_vector(&self, v: Point2) -> Point2 {
        v.rotate(self.angle)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Transform2) -> Transform2 {
        let t = self.apply(other.translation());
        Transform2::new(t.x, t.y, wrap_angle(self.angle + other.angle))
    }

    pub fn inverse(&self) -> Transform2 {
        let t = (-self.translation()).rotate(-self.angle);
        Transform2::new(t.x, t.y, wrap_angle(-self.angle))
    }
}

/// Object pose on the work surface.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, theta: f64) -> Self {
        Pose { x, y, z, theta: wrap_angle(theta) }
    }

    pub fn planar(x: f64, y: f64, theta: f64) -> Self {
        Pose::new(x, y, 0.0, theta)
    }

    pub fn transform(&self) -> Transform2 {
        Transform2::new(self.x, self.y, self.theta)
    }
}

/// Signed area of a closed ring (positive when counter-clockwise).
pub fn ring_area(ring: &[Point2]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += ring[i].cross(ring[(i + 1) % n]);
    }
    0.5 * acc
}

/// Area-weighted centroid and signed area of a ring.
fn ring_moments(ring: &[Point2]) -> (f64, Point2) {
    let n = ring.len();
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        let c = p.cross(q);
        a += c;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    (0.5 * a, Point2::new(cx / 6.0, cy / 6.0))
}

/// Even-odd crossing test of a point against a ring.
pub fn ring_contains(ring: &[Point2], p: Point2) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = ring[i];
        let b = ring[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm2();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (p - a.lerp(b, t)).norm()
}

pub(crate) fn segments_cross_properly(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// True when the ring has no two non-adjacent edges that touch or cross.
pub fn ring_is_simple(ring: &[Point2]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if (b - a).norm() <= EPS {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let c = ring[j];
            let d = ring[(j + 1) % n];
            if adjacent {
                // adjacent edges may only share their common vertex
                let (shared, other_a, other_b) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                let u = other_a - shared;
                let v = other_b - shared;
                if u.cross(v).abs() <= EPS * u.norm().max(v.norm()) && u.dot(v) > 0.0 {
                    return false;
                }
                continue;
            }
            if segments_cross_properly(a, b, c, d)
                || segment_distance(c, a, b) <= EPS
                || segment_distance(d, a, b) <= EPS
                || segment_distance(a, c, d) <= EPS
                || segment_distance(b, c, d) <= EPS
            {
                return false;
            }
        }
    }
    true
}

/// A simple polygon with optional holes.
///
/// The outer ring is counter-clockwise, holes are clockwise and lie inside
/// the outer ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    outer: Vec<Point2>,
    holes: Vec<Vec<Point2>>,
}

impl Polygon {
    /// Builds a hole-free polygon, reorienting the ring to counter-clockwise.
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        Polygon::with_holes(vertices, Vec::new())
    }

    pub fn with_holes(
        mut outer: Vec<Point2>,
        holes: Vec<Vec<Point2>>,
    ) -> Result<Self, GeometryError> {
        if outer.len() < 3 {
            return Err(GeometryError::TooFewVertices(outer.len()));
        }
        if !ring_is_simple(&outer) {
            return Err(GeometryError::SelfIntersecting);
        }
        let a = ring_area(&outer);
        if a.abs() <= AREA_EPS {
            return Err(GeometryError::Degenerate);
        }
        if a < 0.0 {
            outer.reverse();
        }
        let mut fixed = Vec::with_capacity(holes.len());
        for mut h in holes {
            if h.len() < 3 {
                return Err(GeometryError::TooFewVertices(h.len()));
            }
            if !ring_is_simple(&h) {
                return Err(GeometryError::SelfIntersecting);
            }
            if ring_area(&h) > 0.0 {
                h.reverse();
            }
            fixed.push(h);
        }
        let poly = Polygon { outer, holes: fixed };
        if poly.area() <= AREA_EPS {
            return Err(GeometryError::Degenerate);
        }
        Ok(poly)
    }

    /// Internal constructor for rings already known to be valid and oriented.
    pub(crate) fn from_rings_unchecked(outer: Vec<Point2>, holes: Vec<Vec<Point2>>) -> Self {
        Polygon { outer, holes }
    }

    pub fn rectangle(min: Point2, max: Point2) -> Result<Self, GeometryError> {
        Polygon::new(vec![
            min,
            Point2::new(max.x, min.y),
            max,
            Point2::new(min.x, max.y),
        ])
    }

    /// Regular `n`-gon with the given circumradius.
    pub fn regular(center: Point2, radius: f64, n: usize, phase: f64) -> Result<Self, GeometryError> {
        let verts = (0..n)
            .map(|i| {
                let a = phase + 2.0 * PI * i as f64 / n as f64;
                center + Point2::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        Polygon::new(verts)
    }

    pub fn outer(&self) -> &[Point2] {
        &self.outer
    }

    pub fn holes(&self) -> &[Vec<Point2>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point2]> {
        std::iter::once(self.outer.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    pub fn area(&self) -> f64 {
        ring_area(&self.outer) + self.holes.iter().map(|h| ring_area(h)).sum::<f64>()
    }

    /// Area-weighted centroid (holes subtract).
    pub fn centroid(&self) -> Point2 {
        let (a, m) = self.moments();
        Point2::new(m.x / a, m.y / a)
    }

    fn moments(&self) -> (f64, Point2) {
        let mut a = 0.0;
        let mut m = Point2::ORIGIN;
        for r in self.rings() {
            let (ra, rm) = ring_moments(r);
            a += ra;
            m = m + rm;
        }
        (a, m)
    }

    /// Even-odd containment over all rings; boundary points are unspecified.
    pub fn contains(&self, p: Point2) -> bool {
        if !ring_contains(&self.outer, p) {
            return false;
        }
        !self.holes.iter().any(|h| ring_contains(h, p))
    }

    pub fn boundary_distance(&self, p: Point2) -> f64 {
        let mut best = f64::INFINITY;
        for r in self.rings() {
            let n = r.len();
            for i in 0..n {
                best = best.min(segment_distance(p, r[i], r[(i + 1) % n]));
            }
        }
        best
    }

    pub fn transformed(&self, t: &Transform2) -> Polygon {
        let map = |r: &Vec<Point2>| r.iter().map(|&p| t.apply(p)).collect::<Vec<_>>();
        Polygon { outer: map(&self.outer), holes: self.holes.iter().map(map).collect() }
    }

    pub fn bounds(&self) -> (Point2, Point2) {
        bounds_of(self.outer.iter().copied())
    }

    pub fn vertex_count(&self) -> usize {
        self.outer.len()
    }

    /// Checks every polygon invariant: simple rings, orientation, positive
    /// area, holes inside the outer ring.
    pub fn is_valid(&self) -> bool {
        if self.outer.len() < 3 || !ring_is_simple(&self.outer) || ring_area(&self.outer) <= 0.0 {
            return false;
        }
        for h in &self.holes {
            if h.len() < 3 || !ring_is_simple(h) || ring_area(h) >= 0.0 {
                return false;
            }
            if !h.iter().all(|&p| ring_contains(&self.outer, p) || self.boundary_distance(p) <= 1e-6) {
                return false;
            }
        }
        self.area() > AREA_EPS
    }
}

pub(crate) fn bounds_of(points: impl Iterator<Item = Point2>) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// A set of polygons with pairwise disjoint interiors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolygonSet(pub Vec<Polygon>);

impl PolygonSet {
    pub fn empty() -> Self {
        PolygonSet(Vec::new())
    }

    pub fn single(p: Polygon) -> Self {
        PolygonSet(vec![p])
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.0
    }

    pub fn area(&self) -> f64 {
        self.0.iter().map(Polygon::area).sum()
    }

    pub fn centroid(&self) -> Option<Point2> {
        let mut a = 0.0;
        let mut m = Point2::ORIGIN;
        for p in &self.0 {
            let (pa, pm) = p.moments();
            a += pa;
            m = m + pm;
        }
        (a > 0.0).then(|| Point2::new(m.x / a, m.y / a))
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.0.iter().any(|poly| poly.contains(p))
    }

    pub fn transformed(&self, t: &Transform2) -> PolygonSet {
        PolygonSet(self.0.iter().map(|p| p.transformed(t)).collect())
    }

    pub fn bounds(&self) -> (Point2, Point2) {
        bounds_of(self.0.iter().flat_map(|p| p.outer.iter().copied()))
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point2]> {
        self.0.iter().flat_map(|p| p.rings())
    }

    pub fn union(&self, other: &PolygonSet) -> PolygonSet {
        polygon_bool(self, other, BoolOp::Union)
    }

    pub fn intersection(&self, other: &PolygonSet) -> PolygonSet {
        polygon_bool(self, other, BoolOp::Intersect)
    }

    pub fn difference(&self, other: &PolygonSet) -> PolygonSet {
        polygon_bool(self, other, BoolOp::Subtract)
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(Polygon::is_valid)
    }

    /// Second moment of area about the centroid divided by area (mm²).
    pub fn gyration_radius2(&self) -> f64 {
        let Some(c) = self.centroid() else { return 0.0 };
        let mut a = 0.0;
        let mut j = 0.0;
        for r in self.rings() {
            let n = r.len();
            for i in 0..n {
                let p = r[i] - c;
                let q = r[(i + 1) % n] - c;
                let cr = p.cross(q);
                a += 0.5 * cr;
                j += cr * (p.x * p.x + p.x * q.x + q.x * q.x + p.y * p.y + p.y * q.y + q.y * q.y) / 12.0;
            }
        }
        if a > 0.0 {
            j / a
        } else {
            0.0
        }
    }
}

/// Euclidean signed distance to a region: negative inside, positive outside.
pub fn signed_distance(point: Point2, region: &PolygonSet) -> f64 {
    let d = region
        .0
        .iter()
        .map(|p| p.boundary_distance(point))
        .fold(f64::INFINITY, f64::min);
    if d <= EPS {
        return 0.0;
    }
    if region.contains(point) {
        -d
    } else {
        d
    }
}
