//! Generation invariants checked part by part; each returns the list of
//! violated rules so a sweep can report them all at once.

use std::f64::consts::FRAC_PI_2;

use taskgrasp::geometry::{cross_section, Family, Part, Point2};
use taskgrasp::partgen::{self, GenConfig, SlotSet};

pub fn interior_angle(ring: &[Point2], i: usize) -> f64 {
    let n = ring.len();
    let u = ring[(i + n - 1) % n] - ring[i];
    let v = ring[(i + 1) % n] - ring[i];
    (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
}

pub fn bracket(p: &Part) -> Vec<&'static str> {
    let mut bad = Vec::new();
    let base = p.regions()[0].shape.outer();
    if !(4..=8).contains(&base.len()) {
        bad.push("base vertex count");
    }
    let walls = &p.regions()[1..];
    if !(1..=5).contains(&walls.len()) {
        bad.push("wall count");
    }
    if !walls.iter().all(|w| (10.0..=50.0).contains(&w.z_high)) {
        bad.push("wall height");
    }
    let f = p.insertion_frame().translation();
    match base.iter().position(|v| (*v - f).norm() < 1e-9) {
        Some(k) if (interior_angle(base, k) - FRAC_PI_2).abs() < 1e-6 => {}
        Some(_) => bad.push("corner angle"),
        None => bad.push("frame not on a base vertex"),
    }
    if p.footprint().len() != 1 {
        bad.push("footprint not connected");
    }
    if p.footprint().centroid().is_none_or(|c| c.norm() > 1e-9) {
        bad.push("not centred");
    }
    bad
}

pub fn gear(p: &Part) -> Vec<&'static str> {
    let mut bad = Vec::new();
    if p.shaft_hole().map(|h| h.diameter) != Some(6.3) {
        bad.push("shaft hole");
    }
    if !(1..=5).contains(&p.regions().len()) {
        bad.push("layer count");
    }
    let mut last = f64::INFINITY;
    for r in p.regions() {
        if r.shape.holes().len() != 1 {
            bad.push("layer without hole");
        }
        let rad = r.shape.outer().iter().map(|v| v.norm()).fold(0.0, f64::max);
        if rad >= last {
            bad.push("layer radii not decreasing");
        }
        last = rad;
    }
    let mut prev = f64::INFINITY;
    for z in 0..70 {
        let a = cross_section(p, z as f64 + 0.5).area();
        if a > prev + 1e-9 {
            bad.push("cross-section grows upward");
            break;
        }
        prev = a;
    }
    bad
}

pub fn shape(p: &Part, slots: &SlotSet) -> Vec<&'static str> {
    let mut bad = Vec::new();
    if !(1..=5).contains(&p.regions().len()) {
        bad.push("cuboid count");
    }
    for r in p.regions() {
        let ring = r.shape.outer();
        if ring.len() != 4 || (0..4).any(|i| (interior_angle(ring, i) - FRAC_PI_2).abs() > 1e-9) {
            bad.push("region not a rectangle");
        }
        let (lo, hi) = r.shape.bounds();
        let (a, b) = (hi.x - lo.x, hi.y - lo.y);
        if a.min(b) < 10.0 - 1e-9 || a.max(b) > 70.0 + 1e-9 {
            bad.push("cuboid size");
        }
        if !(10.0..=30.0).contains(&r.z_high) {
            bad.push("cuboid height");
        }
    }
    if p.footprint().len() != 1 {
        bad.push("union not connected");
    }
    if !slots.slots.windows(2).all(|w| w[1].clearance < w[0].clearance) {
        bad.push("slot ladder");
    }
    bad
}

/// Generates `count` parts of a family and returns `(part index, rule)` for
/// every violation.
pub fn sweep(seed: u64, family: Family, count: u64) -> Vec<(u64, &'static str)> {
    let mut out = Vec::new();
    for i in 0..count {
        let cfg = GenConfig::for_index(seed, family, i);
        let bad = match family {
            Family::Bracket => bracket(&partgen::generate(&cfg).unwrap()),
            Family::Gear => gear(&partgen::generate(&cfg).unwrap()),
            Family::Shape => {
                let (p, slots) = partgen::gen_shape_with_slots(&cfg).unwrap();
                shape(&p, &slots)
            }
        };
        out.extend(bad.into_iter().map(|b| (i, b)));
    }
    out
}
