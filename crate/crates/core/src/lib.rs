//! Task-oriented grasp planning workbench.
//!
//! The crate covers the whole loop: procedural parts, depth rendering, a
//! quasi-static grasp and insertion oracle, self-supervised data collection,
//! three cascaded convolutional scorers and the ablation harness.

pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod nets;
pub mod partgen;
mod par;
pub mod physics;
pub mod pipeline;
pub mod planner;
pub mod render;
pub mod rng;

pub use geometry::{Family, Part, Point2, Polygon, PolygonSet, Pose, Transform2};
pub use physics::{Displacement, Grasp, GripperSpec, NoiseSpec};
pub use dataset::TrialRecord;
pub use nets::{Scorer, TrainConfig, Variant};
pub use planner::{Mode, NetSet, PlanResult, PlannerConfig};
pub use eval::{EvalConfig, EvalReport};
