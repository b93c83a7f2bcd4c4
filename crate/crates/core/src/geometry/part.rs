use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{polygon_bool, BoolOp, GeometryError, Point2, Polygon, PolygonSet, Transform2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Bracket,
    Gear,
    Shape,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Bracket, Family::Gear, Family::Shape];

    pub fn tag(self) -> u8 {
        match self {
            Family::Bracket => 0,
            Family::Gear => 1,
            Family::Shape => 2,
        }
    }

    pub fn from_tag(t: u8) -> Option<Family> {
        Family::ALL.get(t as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Bracket => "bracket",
            Family::Gear => "gear",
            Family::Shape => "shape",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bracket" => Ok(Family::Bracket),
            "gear" => Ok(Family::Gear),
            "shape" => Ok(Family::Shape),
            other => Err(format!("unknown family '{other}'")),
        }
    }
}

/// One extruded slab of a part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub shape: Polygon,
    pub z_low: f64,
    pub z_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShaftHole {
    pub center: Point2,
    pub diameter: f64,
}

/// Extruded-polygon solid expressed in its own frame.
///
/// After construction the footprint centroid sits at the origin, so grasp
/// offsets and the insertion frame are both relative to the geometric center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub id: u32,
    pub family: Family,
    regions: Vec<Region>,
    insertion_frame: Transform2,
    shaft_hole: Option<ShaftHole>,
}

impl Part {
    /// Validates the regions and re-centres everything on the footprint
    /// centroid.
    pub fn new(
        id: u32,
        family: Family,
        regions: Vec<Region>,
        insertion_frame: Transform2,
        shaft_hole: Option<ShaftHole>,
    ) -> Result<Part, GeometryError> {
        let part = Part { id, family, regions, insertion_frame, shaft_hole };
        part.check()?;
        let c = part
            .footprint()
            .centroid()
            .ok_or_else(|| GeometryError::InvalidPart("empty footprint".into()))?;
        Ok(part.translated(-c))
    }

    /// Rebuilds a part exactly as stored, without re-centring.
    pub(crate) fn from_raw(
        id: u32,
        family: Family,
        regions: Vec<Region>,
        insertion_frame: Transform2,
        shaft_hole: Option<ShaftHole>,
    ) -> Result<Part, GeometryError> {
        let part = Part { id, family, regions, insertion_frame, shaft_hole };
        part.check()?;
        Ok(part)
    }

    fn check(&self) -> Result<(), GeometryError> {
        if self.regions.is_empty() {
            return Err(GeometryError::InvalidPart("no regions".into()));
        }
        for r in &self.regions {
            if !(r.z_high > r.z_low) {
                return Err(GeometryError::InvalidPart(format!(
                    "region z range [{}, {}] is empty",
                    r.z_low, r.z_high
                )));
            }
        }
        if self.shaft_hole.is_some() && self.family != Family::Gear {
            return Err(GeometryError::InvalidPart("only gears carry a shaft hole".into()));
        }
        Ok(())
    }

    fn translated(&self, d: Point2) -> Part {
        let t = Transform2::new(d.x, d.y, 0.0);
        self.transformed(&t)
    }

    fn transformed(&self, t: &Transform2) -> Part {
        Part {
            id: self.id,
            family: self.family,
            regions: self
                .regions
                .iter()
                .map(|r| Region { shape: r.shape.transformed(t), z_low: r.z_low, z_high: r.z_high })
                .collect(),
            insertion_frame: t.compose(&self.insertion_frame),
            shaft_hole: self
                .shaft_hole
                .map(|h| ShaftHole { center: t.apply(h.center), diameter: h.diameter }),
        }
    }

    /// The same part rotated about its geometric center.
    pub fn rotated(&self, angle: f64) -> Part {
        self.transformed(&Transform2::new(0.0, 0.0, angle))
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn insertion_frame(&self) -> Transform2 {
        self.insertion_frame
    }

    pub fn shaft_hole(&self) -> Option<ShaftHole> {
        self.shaft_hole
    }

    /// Union of all region outlines.
    pub fn footprint(&self) -> PolygonSet {
        union_all(self.regions.iter().map(|r| &r.shape))
    }

    pub fn max_height(&self) -> f64 {
        self.regions.iter().map(|r| r.z_high).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.regions.iter().map(|r| r.z_low).fold(f64::INFINITY, f64::min)
    }

    /// Axis-aligned 3D bounding box as `(min, max)` corners.
    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let (lo, hi) = super::bounds_of(self.regions.iter().flat_map(|r| r.shape.outer().iter().copied()));
        ([lo.x, lo.y, self.min_height()], [hi.x, hi.y, self.max_height()])
    }

    /// Largest distance from the origin to any vertex.
    pub fn circumradius(&self) -> f64 {
        self.regions
            .iter()
            .flat_map(|r| r.shape.outer().iter())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    /// Highest region top at `p` among regions active at height `z`.
    pub fn top_at(&self, p: Point2, z: f64) -> Option<f64> {
        self.regions
            .iter()
            .filter(|r| r.z_low <= z && z < r.z_high && r.shape.contains(p))
            .map(|r| r.z_high)
            .fold(None, |acc: Option<f64>, h| Some(acc.map_or(h, |a| a.max(h))))
    }
}

fn union_all<'a>(polys: impl Iterator<Item = &'a Polygon>) -> PolygonSet {
    let mut acc = PolygonSet::empty();
    for p in polys {
        acc = polygon_bool(&acc, &PolygonSet::single(p.clone()), BoolOp::Union);
    }
    acc
}

/// Area-weighted centroid of the footprint union.
pub fn geometric_center(part: &Part) -> Point2 {
    part.footprint().centroid().unwrap_or(Point2::ORIGIN)
}

/// Union of the outlines of every region with `z_low <= z < z_high`.
pub fn cross_section(part: &Part, z: f64) -> PolygonSet {
    union_all(part.regions.iter().filter(|r| r.z_low <= z && z < r.z_high).map(|r| &r.shape))
}
