//! Insertion outcome for the three assembly tasks.
//!
//! The robot aligns the insertion frame it believes in (`F_est`) with the
//! assembly frame, so the true insertion frame lands at `F_est⁻¹ ∘ F_true`
//! and the gripper footprint at `F_est⁻¹ ∘ fingers`.

use serde::{Deserialize, Serialize};

use super::{estimated_in_hand, Displacement, Grasp, GraspOutcome, GripperSpec};
use crate::geometry::{polygon_bool, BoolOp, Family, Part, Polygon, PolygonSet, Pose};
use crate::partgen::{self, SlotSet, PEG_DIAMETERS, SHAFT_DIAMETER};

/// Radial clearance the gripper needs around a peg.
pub const PEG_CLEARANCE: f64 = 2.0;

/// Residual area below which a footprint counts as inside a cavity.
const FIT_AREA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Assembly {
    /// Right-angle corner; the free wedge opens toward `-x` of the assembly frame.
    Corner,
    Pegs(Vec<f64>),
    Slots(SlotSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub family: Family,
    pub assembly: Assembly,
    /// Part footprint in insertion-frame coordinates (shapes only).
    pub footprint: Option<PolygonSet>,
}

impl TaskParams {
    /// Task fixture for a part in its canonical frame.
    pub fn for_part(part: &Part) -> Result<TaskParams, crate::geometry::GeometryError> {
        Ok(match part.family {
            Family::Bracket => TaskParams { family: Family::Bracket, assembly: Assembly::Corner, footprint: None },
            Family::Gear => TaskParams {
                family: Family::Gear,
                assembly: Assembly::Pegs(PEG_DIAMETERS.to_vec()),
                footprint: None,
            },
            Family::Shape => {
                let inv = part.insertion_frame().inverse();
                TaskParams {
                    family: Family::Shape,
                    assembly: Assembly::Slots(partgen::slots_for(part)?),
                    footprint: Some(part.footprint().transformed(&inv)),
                }
            }
        })
    }

    pub fn levels(&self) -> usize {
        match &self.assembly {
            Assembly::Corner => 0,
            Assembly::Pegs(p) => p.len(),
            Assembly::Slots(s) => s.slots.len(),
        }
    }
}

/// Insertion error for a lifted grasp of `part` placed at `pose`; `est` is
/// the world-axis displacement estimate used to correct the in-hand pose.
pub fn simulate_insertion(
    part: &Part,
    pose: &Pose,
    grasp: &Grasp,
    outcome: &GraspOutcome,
    est: &Displacement,
    task: &TaskParams,
    gripper: &GripperSpec,
) -> f64 {
    let x_true = outcome.in_hand;
    let x_est = estimated_in_hand(pose, grasp, est);
    let t = part.insertion_frame();
    let f_true = x_true.compose(&t);
    let f_est = x_est.compose(&t);
    let to_target = f_est.inverse();
    let fingers = gripper.finger_rects(outcome.opening);

    match &task.assembly {
        Assembly::Corner => {
            let r = x_true.compose(&x_est.inverse());
            let arm = f_est.translation().norm();
            let base = r.translation().norm() + arm * r.angle.abs();
            // back off along -x until every finger corner is inside the free wedge x <= -|y|
            let standoff = fingers
                .iter()
                .flatten()
                .map(|&c| {
                    let p = to_target.apply(c);
                    p.x + p.y.abs()
                })
                .fold(0.0, f64::max);
            standoff + base
        }
        Assembly::Pegs(diameters) => {
            let residual = (f_true.translation() - f_est.translation()).norm();
            let h = 0.5 * gripper.finger_width;
            let reach = outcome.opening + gripper.finger_thickness;
            let hole = f_est.translation();
            // distance from the peg axis to the closed gripper's footprint
            let du = (hole.x.abs() - reach).max(0.0);
            let dv = (hole.y.abs() - h).max(0.0);
            let gap = du.hypot(dv);
            let mut best = 0;
            for (k, &d) in diameters.iter().enumerate() {
                let fits = residual <= 0.5 * (SHAFT_DIAMETER - d);
                let clear = gap >= 0.5 * d + PEG_CLEARANCE;
                if fits && clear {
                    best = k + 1;
                }
            }
            -(best as f64)
        }
        Assembly::Slots(slots) => {
            let fp = task.footprint.as_ref().expect("shape task carries its footprint");
            let err = to_target.compose(&f_true);
            let placed = fp.transformed(&err);
            let finger_sets: Vec<PolygonSet> = fingers
                .iter()
                .map(|r| {
                    let pts = r.iter().map(|&c| to_target.apply(c)).collect();
                    PolygonSet::single(Polygon::new(pts).expect("finger rectangle"))
                })
                .collect();
            let low = grasp.z < slots.slots.first().map_or(0.0, |s| s.height);
            let mut best = 0;
            for s in &slots.slots {
                let fits = fits_cavity(&placed, &s.cavity);
                let clear = !low
                    || finger_sets
                        .iter()
                        .all(|f| fits_cavity(f, &s.cavity));
                if fits && clear {
                    best = s.id as usize;
                } else {
                    break;
                }
            }
            -(best as f64)
        }
    }
}

pub fn fits_cavity(placed: &PolygonSet, cavity: &PolygonSet) -> bool {
    polygon_bool(placed, cavity, BoolOp::Subtract).area() <= FIT_AREA_EPS
}
