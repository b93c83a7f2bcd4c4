//! Line-oriented part file format.
//!
//! ```text
//! PART <family> <ix> <iy> <itheta>
//! REGION <z_low> <z_high> <n> x1 y1 ... xn yn
//! HOLE <cx> <cy> <d>
//! ```
//!
//! Numbers use Rust's shortest round-trip decimal form, so a write/read
//! cycle reproduces every coordinate exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::{Family, GeometryError, Part, Point2, Polygon, Region, ShaftHole, Transform2};

/// Number of vertices used to approximate a shaft hole.
pub const HOLE_SEGMENTS: usize = 32;

/// Clockwise ring approximating a shaft hole (vertices on the circle).
pub fn hole_ring(hole: &ShaftHole) -> Vec<Point2> {
    let r = 0.5 * hole.diameter;
    (0..HOLE_SEGMENTS)
        .map(|i| {
            let a = -2.0 * std::f64::consts::PI * i as f64 / HOLE_SEGMENTS as f64;
            hole.center + Point2::new(r * a.cos(), r * a.sin())
        })
        .collect()
}

pub fn part_to_string(part: &Part) -> String {
    let mut s = String::new();
    let f = part.insertion_frame();
    let _ = writeln!(s, "PART {} {} {} {}", part.family, f.x, f.y, f.angle);
    for r in part.regions() {
        let outer = r.shape.outer();
        let _ = write!(s, "REGION {} {} {}", r.z_low, r.z_high, outer.len());
        for p in outer {
            let _ = write!(s, " {} {}", p.x, p.y);
        }
        s.push('\n');
    }
    if let Some(h) = part.shaft_hole() {
        let _ = writeln!(s, "HOLE {} {} {}", h.center.x, h.center.y, h.diameter);
    }
    s
}

pub fn part_from_str(text: &str, id: u32) -> Result<Part, GeometryError> {
    let mut header: Option<(Family, Transform2)> = None;
    let mut outlines: Vec<(f64, f64, Vec<Point2>)> = Vec::new();
    let mut hole = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: &str| GeometryError::Parse { line: line_no, msg: msg.to_string() };
        let mut tok = line.split_whitespace();
        let Some(kind) = tok.next() else { continue };
        let nums = |tok: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>, GeometryError> {
            tok.map(|t| t.parse::<f64>().map_err(|_| err(&format!("bad number '{t}'"))))
                .collect()
        };
        match kind {
            "PART" => {
                let fam: Family = tok
                    .next()
                    .ok_or_else(|| err("missing family"))?
                    .parse()
                    .map_err(|e: String| err(&e))?;
                let v = nums(tok)?;
                if v.len() != 3 {
                    return Err(err("PART needs ix iy itheta"));
                }
                header = Some((fam, Transform2::new(v[0], v[1], v[2])));
            }
            "REGION" => {
                let v = nums(tok)?;
                if v.len() < 3 {
                    return Err(err("REGION needs z_low z_high n"));
                }
                let n = v[2] as usize;
                if v[2] != n as f64 || v.len() != 3 + 2 * n {
                    return Err(err("REGION vertex count mismatch"));
                }
                let pts = v[3..].chunks(2).map(|c| Point2::new(c[0], c[1])).collect();
                outlines.push((v[0], v[1], pts));
            }
            "HOLE" => {
                let v = nums(tok)?;
                if v.len() != 3 {
                    return Err(err("HOLE needs cx cy d"));
                }
                hole = Some(ShaftHole { center: Point2::new(v[0], v[1]), diameter: v[2] });
            }
            other => return Err(err(&format!("unknown record '{other}'"))),
        }
    }
    let (family, frame) =
        header.ok_or(GeometryError::Parse { line: 0, msg: "missing PART header".into() })?;
    let mut regions = Vec::with_capacity(outlines.len());
    for (z_low, z_high, pts) in outlines {
        let holes = hole.iter().map(hole_ring).collect();
        regions.push(Region { shape: Polygon::with_holes(pts, holes)?, z_low, z_high });
    }
    Part::from_raw(id, family, regions, frame, hole)
}

pub fn write_part(path: &Path, part: &Part) -> Result<(), GeometryError> {
    std::fs::write(path, part_to_string(part))?;
    Ok(())
}

pub fn read_part(path: &Path, id: u32) -> Result<Part, GeometryError> {
    let text = std::fs::read_to_string(path)?;
    part_from_str(&text, id)
}
