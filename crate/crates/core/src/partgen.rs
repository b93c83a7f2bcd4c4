//! Procedural brackets, gears and shapes with their slot fixtures.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    polygon_bool, BoolOp, Family, GeometryError, Part, Point2, Polygon, PolygonSet, Region,
    ShaftHole, Transform2,
};
use crate::rng;

pub const MAX_RETRIES: usize = 100;
pub const BASE_THICKNESS: f64 = 3.0;
pub const WALL_THICKNESS: f64 = 3.0;
pub const WALL_HEIGHT: (f64, f64) = (10.0, 50.0);
pub const SHAFT_DIAMETER: f64 = 6.3;
pub const PEG_DIAMETERS: [f64; 6] = [3.0, 4.0, 4.5, 5.0, 5.5, 6.0];
pub const SLOT_CLEARANCES: [f64; 4] = [9.0, 6.0, 4.0, 3.0];
pub const SLOT_HEIGHT: f64 = 10.0;

/// Parts must fit the render frame at any orientation.
pub const MAX_CIRCUMRADIUS: f64 = 90.0;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("{family} generation failed after {attempts} attempts")]
    Exhausted { family: Family, attempts: usize },
    #[error("family mismatch: expected {expected}, got {got}")]
    WrongFamily { expected: Family, got: Family },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub family: Family,
}

impl GenConfig {
    pub fn new(seed: u64, family: Family) -> Self {
        GenConfig { seed, family }
    }

    /// Config of the `index`-th part of a batch.
    pub fn for_index(seed: u64, family: Family, index: u64) -> Self {
        let fam_seed = rng::derive_named(seed, family.name());
        GenConfig { seed: rng::derive(fam_seed, index), family }
    }

    pub fn part_id(&self) -> u32 {
        self.seed as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub id: u8,
    pub clearance: f64,
    pub cavity: PolygonSet,
    pub height: f64,
}

/// Four cavities cut for one shape, loosest first, in the shape's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSet {
    pub slots: Vec<Slot>,
}

impl SlotSet {
    /// Cavities for a shape made of the given axis-aligned rectangles.
    pub fn for_rectangles(rects: &[(Point2, Point2)]) -> Result<SlotSet, GeometryError> {
        let mut slots = Vec::with_capacity(SLOT_CLEARANCES.len());
        for (i, &c) in SLOT_CLEARANCES.iter().enumerate() {
            let h = 0.5 * c;
            let mut cavity = PolygonSet::empty();
            for &(lo, hi) in rects {
                let r = Polygon::rectangle(lo - Point2::new(h, h), hi + Point2::new(h, h))?;
                cavity = polygon_bool(&cavity, &PolygonSet::single(r), BoolOp::Union);
            }
            slots.push(Slot { id: i as u8 + 1, clearance: c, cavity, height: SLOT_HEIGHT });
        }
        Ok(SlotSet { slots })
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Part, GenError> {
    match cfg.family {
        Family::Bracket => gen_bracket(cfg),
        Family::Gear => gen_gear(cfg),
        Family::Shape => gen_shape_with_slots(cfg).map(|(p, _)| p),
    }
}

/// `count` parts of one family; part `i` uses `GenConfig::for_index(seed, family, i)`.
pub fn generate_batch(seed: u64, family: Family, count: usize) -> Result<Vec<Part>, GenError> {
    (0..count as u64).map(|i| generate(&GenConfig::for_index(seed, family, i))).collect()
}

fn check_family(cfg: &GenConfig, expected: Family) -> Result<(), GenError> {
    if cfg.family != expected {
        return Err(GenError::WrongFamily { expected, got: cfg.family });
    }
    Ok(())
}

pub fn gen_bracket(cfg: &GenConfig) -> Result<Part, GenError> {
    check_family(cfg, Family::Bracket)?;
    let mut r = rng::stream(cfg.seed, 0);
    for _ in 0..MAX_RETRIES {
        if let Some(part) = try_bracket(cfg.part_id(), &mut r)? {
            return Ok(part);
        }
    }
    Err(GenError::Exhausted { family: Family::Bracket, attempts: MAX_RETRIES })
}

fn try_bracket(id: u32, r: &mut rng::Rng) -> Result<Option<Part>, GenError> {
    // Fan of vertices around the right-angle corner at the origin: strictly
    // increasing polar angles in [0, π/2] keep the ring simple.
    let n = r.random_range(4..=8usize);
    let a = r.random_range(35.0..100.0);
    let b = r.random_range(35.0..100.0);
    let chain = n - 3;
    let mut angles: Vec<f64> = (0..chain).map(|_| r.random_range(0.12..FRAC_PI_2 - 0.12)).collect();
    angles.sort_by(f64::total_cmp);
    if angles.windows(2).any(|w| w[1] - w[0] < 0.1) {
        return Ok(None);
    }
    let mut ring = vec![Point2::ORIGIN, Point2::new(a, 0.0)];
    for &phi in &angles {
        let rad = r.random_range(30.0..110.0);
        ring.push(Point2::new(rad * phi.cos(), rad * phi.sin()));
    }
    ring.push(Point2::new(0.0, b));
    let len = ring.len();
    let short_edge = (0..len).any(|i| (ring[(i + 1) % len] - ring[i]).norm() < 12.0);
    let flat = (0..len).any(|i| {
        let p = ring[(i + len - 1) % len];
        let q = ring[i];
        let s = ring[(i + 1) % len];
        let turn = (q - p).cross(s - q) / ((q - p).norm() * (s - q).norm());
        turn.abs() < 0.05
    });
    if short_edge || flat {
        return Ok(None);
    }
    let base = match Polygon::new(ring.clone()) {
        Ok(p) if p.is_valid() && p.area() > 800.0 => p,
        _ => return Ok(None),
    };
    let base_set = PolygonSet::single(base.clone());

    let want = r.random_range(1..=5usize).min(n);
    let mut edges: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        edges.swap(i, j);
    }
    let mut regions = vec![Region { shape: base, z_low: 0.0, z_high: BASE_THICKNESS }];
    for &e in edges.iter().take(want) {
        let h = r.random_range(WALL_HEIGHT.0..=WALL_HEIGHT.1);
        if let Some(wall) = wall_on_edge(ring[e], ring[(e + 1) % n], &base_set) {
            regions.push(Region { shape: wall, z_low: 0.0, z_high: h });
        }
    }
    if regions.len() < 2 {
        return Ok(None);
    }
    // Insertion direction points out of the corner along the bisector.
    let frame = Transform2::new(0.0, 0.0, -3.0 * PI / 4.0);
    let part = Part::new(id, Family::Bracket, regions, frame, None)?;
    if part.circumradius() > MAX_CIRCUMRADIUS {
        return Ok(None);
    }
    Ok(Some(part))
}

/// A wall strip on the inner side of edge `a→b`, trimmed until it sits
/// inside the base.
fn wall_on_edge(a: Point2, b: Point2, base: &PolygonSet) -> Option<Polygon> {
    let len = (b - a).norm();
    let d = (b - a) * (1.0 / len);
    let inward = Point2::new(-d.y, d.x) * WALL_THICKNESS;
    let mut trim = 0.0;
    while len - 2.0 * trim >= 10.0 {
        let p = a + d * trim;
        let q = b - d * trim;
        if let Ok(wall) = Polygon::new(vec![p, q, q + inward, p + inward]) {
            let outside = polygon_bool(&PolygonSet::single(wall.clone()), base, BoolOp::Subtract);
            if outside.is_empty() {
                return Some(wall);
            }
        }
        trim += 1.0;
    }
    None
}

/// One gear layer: regular polygon of `sides` vertices on a circle of
/// `radius`, extruded by `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GearLayer {
    pub radius: f64,
    pub sides: usize,
    pub phase: f64,
    pub height: f64,
}

pub fn build_gear(id: u32, layers: &[GearLayer]) -> Result<Part, GeometryError> {
    let hole = ShaftHole { center: Point2::ORIGIN, diameter: SHAFT_DIAMETER };
    let hole_ring = crate::geometry::hole_ring(&hole);
    let mut regions = Vec::with_capacity(layers.len());
    let mut z = 0.0;
    for l in layers {
        let outline = Polygon::regular(Point2::ORIGIN, l.radius, l.sides, l.phase)?;
        let shape = Polygon::with_holes(outline.outer().to_vec(), vec![hole_ring.clone()])?;
        regions.push(Region { shape, z_low: z, z_high: z + l.height });
        z += l.height;
    }
    Part::new(id, Family::Gear, regions, Transform2::IDENTITY, Some(hole))
}

pub fn gen_gear(cfg: &GenConfig) -> Result<Part, GenError> {
    check_family(cfg, Family::Gear)?;
    let mut r = rng::stream(cfg.seed, 0);
    for _ in 0..MAX_RETRIES {
        let count = r.random_range(1..=5usize);
        let mut layers: Vec<GearLayer> = Vec::with_capacity(count);
        for _ in 0..count {
            // each layer fits inside the inscribed circle of the one below
            let upper = match layers.last() {
                None => 38.0,
                Some(l) => l.radius * (PI / l.sides as f64).cos() - 0.5,
            };
            if upper < 9.0 {
                break;
            }
            let lower = if layers.is_empty() { 20.0 } else { 8.0 };
            layers.push(GearLayer {
                radius: r.random_range(lower..=upper),
                sides: r.random_range(4..=50usize),
                phase: r.random_range(0.0..2.0 * PI),
                height: r.random_range(3.0..=12.0),
            });
        }
        // the shaft must clear the flats of every layer
        if layers.iter().any(|l| l.radius * (PI / l.sides as f64).cos() < 0.5 * SHAFT_DIAMETER + 2.0) {
            continue;
        }
        return Ok(build_gear(cfg.part_id(), &layers)?);
    }
    Err(GenError::Exhausted { family: Family::Gear, attempts: MAX_RETRIES })
}

/// A shape from axis-aligned rectangles `(min, max, height)`, plus its slots.
pub fn build_shape(
    id: u32,
    cuboids: &[(Point2, Point2, f64)],
) -> Result<(Part, SlotSet), GeometryError> {
    let regions = cuboids
        .iter()
        .map(|&(lo, hi, h)| Ok(Region { shape: Polygon::rectangle(lo, hi)?, z_low: 0.0, z_high: h }))
        .collect::<Result<Vec<_>, GeometryError>>()?;
    let part = Part::new(id, Family::Shape, regions, Transform2::IDENTITY, None)?;
    let rects: Vec<(Point2, Point2)> = part.regions().iter().map(|r| r.shape.bounds()).collect();
    let slots = SlotSet::for_rectangles(&rects)?;
    Ok((part, slots))
}

pub fn gen_shape_with_slots(cfg: &GenConfig) -> Result<(Part, SlotSet), GenError> {
    check_family(cfg, Family::Shape)?;
    let mut r = rng::stream(cfg.seed, 0);
    'attempt: for _ in 0..MAX_RETRIES {
        let count = r.random_range(1..=5usize);
        let mut cuboids: Vec<(Point2, Point2, f64)> = Vec::with_capacity(count);
        for i in 0..count {
            let len = r.random_range(10.0..=70.0);
            let wid = r.random_range(20.0..=30.0);
            let height = r.random_range(10.0..=30.0);
            let half = if r.random_bool(0.5) {
                Point2::new(0.5 * len, 0.5 * wid)
            } else {
                Point2::new(0.5 * wid, 0.5 * len)
            };
            let center = if i == 0 {
                Point2::ORIGIN
            } else {
                // overlap the previous cuboid by at least 5mm on both axes
                let (plo, phi, _) = cuboids[i - 1];
                let lo = Point2::new(plo.x - half.x + 5.0, plo.y - half.y + 5.0);
                let hi = Point2::new(phi.x + half.x - 5.0, phi.y + half.y - 5.0);
                if lo.x > hi.x || lo.y > hi.y {
                    continue 'attempt;
                }
                Point2::new(r.random_range(lo.x..=hi.x), r.random_range(lo.y..=hi.y))
            };
            cuboids.push((center - half, center + half, height));
        }
        let (part, slots) = build_shape(cfg.part_id(), &cuboids)?;
        let fp = part.footprint();
        if fp.len() != 1 || !fp.polygons()[0].holes().is_empty() {
            continue;
        }
        if part.circumradius() + 0.5 * SLOT_CLEARANCES[0] > MAX_CIRCUMRADIUS {
            continue;
        }
        return Ok((part, slots));
    }
    Err(GenError::Exhausted { family: Family::Shape, attempts: MAX_RETRIES })
}

/// Shape slots rebuilt from a stored part.
pub fn slots_for(part: &Part) -> Result<SlotSet, GeometryError> {
    let rects: Vec<(Point2, Point2)> = part.regions().iter().map(|r| r.shape.bounds()).collect();
    SlotSet::for_rectangles(&rects)
}

/// Interior angles of a ring, radians.
pub fn interior_angles(ring: &[Point2]) -> Vec<f64> {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let p = ring[(i + n - 1) % n];
            let q = ring[i];
            let s = ring[(i + 1) % n];
            let u = p - q;
            let v = s - q;
            // CCW ring: interior angle measured from the outgoing to the incoming edge
            let mut a = v.cross(u).atan2(v.dot(u));
            if a < 0.0 {
                a += 2.0 * PI;
            }
            a
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_has_right_corner_at_frame() {
        for i in 0..30 {
            let p = gen_bracket(&GenConfig::for_index(5, Family::Bracket, i)).unwrap();
            let base = p.regions()[0].shape.outer();
            assert!((4..=8).contains(&base.len()));
            let f = p.insertion_frame().translation();
            let k = base.iter().position(|v| (*v - f).norm() < 1e-9).expect("frame at vertex");
            assert!((interior_angles(base)[k] - FRAC_PI_2).abs() < 1e-6);
            for w in &p.regions()[1..] {
                assert!((10.0..=50.0).contains(&w.z_high));
            }
        }
    }

    #[test]
    fn gear_radii_decrease() {
        for i in 0..30 {
            let p = gen_gear(&GenConfig::for_index(5, Family::Gear, i)).unwrap();
            assert_eq!(p.shaft_hole().unwrap().diameter, 6.3);
            let radii: Vec<f64> = p.regions().iter().map(|r| r.shape.outer()[0].norm()).collect();
            assert!(radii.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn minimal_gear_is_square_with_hole() {
        let g = build_gear(1, &[GearLayer { radius: 20.0, sides: 4, phase: 0.0, height: 5.0 }]).unwrap();
        let fp = g.footprint();
        assert_eq!(fp.len(), 1);
        assert_eq!(fp.polygons()[0].outer().len(), 4);
        assert_eq!(fp.polygons()[0].holes().len(), 1);
    }

    #[test]
    fn single_cuboid_cavity_is_dilated_rectangle() {
        let (_, slots) =
            build_shape(1, &[(Point2::new(0.0, 0.0), Point2::new(40.0, 25.0), 12.0)]).unwrap();
        for s in &slots.slots {
            let expect = (40.0 + s.clearance) * (25.0 + s.clearance);
            assert!((s.cavity.area() - expect).abs() < 1e-9);
            assert_eq!(s.cavity.polygons()[0].outer().len(), 4);
        }
    }

    #[test]
    fn shapes_connected() {
        for i in 0..30 {
            let (p, s) = gen_shape_with_slots(&GenConfig::for_index(5, Family::Shape, i)).unwrap();
            assert_eq!(p.footprint().len(), 1);
            assert!(s.slots.iter().all(|sl| sl.cavity.area() > p.footprint().area()));
        }
    }

    #[test]
    fn wrong_family_is_rejected() {
        assert!(matches!(
            gen_gear(&GenConfig::new(1, Family::Shape)),
            Err(GenError::WrongFamily { .. })
        ));
    }
}
