//! Quasi-static grasp oracle.
//!
//! Two finger slabs close along the gripper's `u` axis at height `g_z`. The
//! object is massless: it moves only to resolve finger penetration. A single
//! contact pushes it (translation plus a lever-arm rotation about the
//! centroid); once both fingers touch, the object is centred between them
//! and rotated by the contact couple until the line between the contacts
//! falls inside the friction cone.

mod insertion;

use std::f64::consts::{FRAC_PI_2, PI};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Part, Point2, Pose, Transform2};

pub use insertion::{fits_cavity, simulate_insertion, Assembly, TaskParams, PEG_CLEARANCE};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("grasp simulation did not converge within {0} iterations")]
    NonConvergence(usize),
}

/// Parallel-jaw grasp relative to the object's geometric centre, world axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Grasp {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
}

/// Wraps into `[-π/2, π/2)`; the jaw is symmetric under a half turn.
pub fn wrap_half_turn(a: f64) -> f64 {
    let mut r = (a + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if r >= FRAC_PI_2 {
        r -= PI;
    }
    r
}

impl Grasp {
    pub fn new(x: f64, y: f64, z: f64, theta: f64) -> Self {
        Grasp { x, y, z, theta: wrap_half_turn(theta) }
    }

    /// Gripper frame in the world: origin between the fingers, `u` along
    /// the closing axis.
    pub fn frame(&self) -> Transform2 {
        Transform2::new(self.x, self.y, self.theta)
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.theta]
    }
}

/// Post-grasp object displacement `[Δx, Δy, Δz, Δθ]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dtheta: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0.0, dy: 0.0, dz: 0.0, dtheta: 0.0 };

    pub fn new(dx: f64, dy: f64, dz: f64, dtheta: f64) -> Self {
        Displacement { dx, dy, dz, dtheta }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Displacement::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dz, self.dtheta]
    }

    /// Re-expresses a world-axis displacement in axes rotated by `angle`.
    pub fn to_frame(&self, angle: f64) -> Displacement {
        let v = Point2::new(self.dx, self.dy).rotate(-angle);
        Displacement::new(v.x, v.y, self.dz, self.dtheta)
    }

    pub fn from_frame(&self, angle: f64) -> Displacement {
        let v = Point2::new(self.dx, self.dy).rotate(angle);
        Displacement::new(v.x, v.y, self.dz, self.dtheta)
    }

    pub fn planar_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn norm(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy + self.dz * self.dz + self.dtheta * self.dtheta).sqrt()
    }

    /// The object pose after applying this displacement to a part whose
    /// centre sits at the world origin.
    pub fn as_transform(&self) -> Transform2 {
        Transform2::new(self.dx, self.dy, self.dtheta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperSpec {
    pub finger_width: f64,
    pub finger_thickness: f64,
    pub max_opening: f64,
    pub friction: f64,
    pub step: f64,
    pub max_iterations: usize,
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec {
            finger_width: 20.0,
            finger_thickness: 4.0,
            max_opening: 80.0,
            friction: 0.5,
            step: 0.5,
            max_iterations: 10_000,
        }
    }
}

impl GripperSpec {
    /// The two finger slabs in the gripper frame at half-opening `a`.
    pub fn finger_rects(&self, a: f64) -> [[Point2; 4]; 2] {
        let h = 0.5 * self.finger_width;
        let t = self.finger_thickness;
        let rect = |u0: f64, u1: f64| {
            [Point2::new(u0, -h), Point2::new(u1, -h), Point2::new(u1, h), Point2::new(u0, h)]
        };
        [rect(a, a + t), rect(-a - t, -a)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { sigma_xy: 1.0, sigma_theta: 0.02 }
    }
}

/// Execution error of one grasp, expressed in the planned gripper frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GraspNoise {
    pub du: f64,
    pub dv: f64,
    pub dtheta: f64,
}

impl GraspNoise {
    pub const ZERO: GraspNoise = GraspNoise { du: 0.0, dv: 0.0, dtheta: 0.0 };

    pub fn as_transform(&self) -> Transform2 {
        Transform2::new(self.du, self.dv, self.dtheta)
    }
}

impl NoiseSpec {
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> GraspNoise {
        let xy = Normal::new(0.0, self.sigma_xy.max(0.0)).expect("finite sigma");
        let th = Normal::new(0.0, self.sigma_theta.max(0.0)).expect("finite sigma");
        GraspNoise { du: xy.sample(rng), dv: xy.sample(rng), dtheta: th.sample(rng) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraspFailure {
    /// Nothing of the part lies between the fingers at this height.
    Miss,
    /// A finger lands on the part while descending.
    DescentCollision,
    /// Fingers closed completely.
    Closed,
    /// Object rotated out of the jaw or left the finger band.
    SqueezedOut,
    /// Too little material above the finger tips on one side.
    ShallowGrip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub lifted: bool,
    pub failure: Option<GraspFailure>,
    /// World-frame displacement as seen from the planned gripper frame.
    pub displacement: Displacement,
    /// Final object pose in the executed gripper frame.
    pub in_hand: Transform2,
    /// Final half-opening of the jaw.
    pub opening: f64,
    pub iterations: usize,
}

/// Axis-aligned box of the part rotated by `theta`, relative to its centre.
pub fn posed_bbox(part: &Part, theta: f64) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY, f64::INFINITY, part.min_height()];
    let mut hi = [f64::NEG_INFINITY, f64::NEG_INFINITY, part.max_height()];
    for r in part.regions() {
        for p in r.shape.outer() {
            let q = p.rotate(theta);
            lo[0] = lo[0].min(q.x);
            lo[1] = lo[1].min(q.y);
            hi[0] = hi[0].max(q.x);
            hi[1] = hi[1].max(q.y);
        }
    }
    (lo, hi)
}

/// World frame of the planned gripper for a part placed at `pose`.
pub fn gripper_frame(pose: &Pose, grasp: &Grasp) -> Transform2 {
    Transform2::new(pose.x + grasp.x, pose.y + grasp.y, grasp.theta)
}

/// Uniform over the posed part's bounding box; angle uniform over `[-π/2, π/2)`.
pub fn sample_grasp<R: rand::Rng + ?Sized>(part: &Part, pose: &Pose, rng: &mut R) -> Grasp {
    let (lo, hi) = posed_bbox(part, pose.theta);
    let u = |rng: &mut R, a: f64, b: f64| a + (b - a) * rng.random::<f64>();
    let x = u(rng, lo[0], hi[0]);
    let y = u(rng, lo[1], hi[1]);
    let z = u(rng, lo[2], hi[2]);
    let theta = u(rng, -FRAC_PI_2, FRAC_PI_2);
    Grasp { x, y, z, theta }
}

/// Part data the oracle reuses across trials.
#[derive(Debug, Clone)]
pub struct SimPart {
    part: Part,
    gyration2: f64,
    circumradius: f64,
}

#[derive(Debug, Clone, Copy)]
struct Band {
    umax: f64,
    v_right: f64,
    top_right: f64,
    umin: f64,
    v_left: f64,
    top_left: f64,
}

const TOUCH: f64 = 1e-6;
const MIN_GRIP_DEPTH: f64 = 2.0;
const MAX_PUSH_TURN: f64 = 0.002;
const MAX_SQUEEZE_TURN: f64 = 0.001;

impl SimPart {
    pub fn new(part: &Part) -> SimPart {
        let fp = part.footprint();
        SimPart {
            part: part.clone(),
            gyration2: fp.gyration_radius2().max(1.0),
            circumradius: part.circumradius().max(1.0),
        }
    }

    pub fn part(&self) -> &Part {
        &self.part
    }

    /// Extent of the active regions inside the finger band `|v| <= h`,
    /// with `x` mapping part coordinates into the gripper frame.
    fn band(&self, x: &Transform2, z: f64, h: f64, buf: &mut Vec<(f64, f64, f64)>) -> Option<Band> {
        buf.clear();
        let (s, c) = x.angle.sin_cos();
        let map = |p: Point2| Point2::new(c * p.x - s * p.y + x.x, s * p.x + c * p.y + x.y);
        for r in self.part.regions() {
            if !(r.z_low <= z && z < r.z_high) {
                continue;
            }
            let ring = r.shape.outer();
            let n = ring.len();
            let mut prev = map(ring[n - 1]);
            for &q in ring {
                let q = map(q);
                if q.y.abs() <= h {
                    buf.push((q.x, q.y, r.z_high));
                }
                for b in [-h, h] {
                    if (prev.y - b) * (q.y - b) < 0.0 {
                        let t = (b - prev.y) / (q.y - prev.y);
                        buf.push((prev.x + t * (q.x - prev.x), b, r.z_high));
                    }
                }
                prev = q;
            }
        }
        if buf.is_empty() {
            return None;
        }
        let umax = buf.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let umin = buf.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let side = |target: f64| {
            let (mut sv, mut n, mut top) = (0.0, 0.0, f64::NEG_INFINITY);
            for p in buf.iter().filter(|p| (p.0 - target).abs() <= TOUCH) {
                sv += p.1;
                n += 1.0;
                top = top.max(p.2);
            }
            (sv / n, top)
        };
        let (v_right, top_right) = side(umax);
        let (v_left, top_left) = side(umin);
        Some(Band { umax, v_right, top_right, umin, v_left, top_left })
    }

    pub fn simulate(
        &self,
        pose: &Pose,
        grasp: &Grasp,
        gripper: &GripperSpec,
        noise: &GraspNoise,
    ) -> Result<GraspOutcome, SimError> {
        let placed = pose.transform();
        let planned = gripper_frame(pose, grasp);
        let executed = planned.compose(&noise.as_transform());
        let x0 = executed.inverse().compose(&placed);
        // The jaw is symmetric under a half turn, so the contact dynamics run
        // on a snapped, half-turn-canonical start pose. Poses that differ only
        // by rounding or by the jaw flip then replay the same trajectory.
        let flip = !(-FRAC_PI_2..FRAC_PI_2).contains(&x0.angle);
        let start = snap(if flip { half_turn(&x0) } else { x0 });
        let (failure, x, a, iterations) = self.close(start, grasp.z, gripper)?;
        let x = if flip { half_turn(&x) } else { x };
        let moved = !matches!(failure, Some(GraspFailure::Miss | GraspFailure::DescentCollision));
        Ok(GraspOutcome {
            lifted: failure.is_none(),
            failure,
            displacement: apparent_displacement(&planned, &placed, &x, moved),
            in_hand: if moved { x } else { x0 },
            opening: a,
            iterations,
        })
    }

    /// Closes the jaw on the object starting at gripper-frame pose `x0`;
    /// returns the failure if any, the final pose, half-opening and iterations.
    fn close(
        &self,
        x0: Transform2,
        z: f64,
        gripper: &GripperSpec,
    ) -> Result<(Option<GraspFailure>, Transform2, f64, usize), SimError> {
        let h = 0.5 * gripper.finger_width;
        let mut buf = Vec::with_capacity(256);
        let failed = |f: GraspFailure, x: Transform2, a: f64, iters: usize| (Some(f), x, a, iters);

        let mut a = 0.5 * gripper.max_opening;
        let Some(b0) = self.band(&x0, z, h, &mut buf) else {
            return Ok(failed(GraspFailure::Miss, x0, a, 0));
        };
        if b0.umax >= a || b0.umin <= -a {
            return Ok(failed(GraspFailure::DescentCollision, x0, a, 0));
        }

        let mut x = x0;
        let mut iters = 0usize;
        let tick = |iters: &mut usize| -> Result<(), SimError> {
            *iters += 1;
            if *iters > gripper.max_iterations {
                Err(SimError::NonConvergence(gripper.max_iterations))
            } else {
                Ok(())
            }
        };

        // push phase: one finger at a time
        'closing: loop {
            let mut reach = a;
            let mut pushed_right = None;
            a -= gripper.step;
            if a <= 0.0 {
                return Ok(failed(GraspFailure::Closed, x, 0.0, iters));
            }
            loop {
                tick(&mut iters)?;
                let Some(b) = self.band(&x, z, h, &mut buf) else {
                    return Ok(failed(GraspFailure::SqueezedOut, x, a, iters));
                };
                // the jaw cannot close past the object; finish the one-sided
                // push up to the point where the far finger touches
                let width = b.umax - b.umin;
                reach = a.max(reach.min(0.5 * width));
                let pr = b.umax - reach;
                let pl = -reach - b.umin;
                let side = if pr > TOUCH && pl > TOUCH {
                    break 'closing;
                } else if pr > TOUCH {
                    true
                } else if pl > TOUCH {
                    false
                } else if width >= 2.0 * a - TOUCH {
                    break 'closing;
                } else {
                    break;
                };
                // resolving one finger pushed the object into the other: pinched
                if pushed_right.is_some_and(|r| r != side) {
                    break 'closing;
                }
                pushed_right = Some(side);
                let (mut shift, mut dtheta) = if side {
                    (-pr, (b.v_right - x.y) * pr / self.gyration2)
                } else {
                    (pl, -(b.v_left - x.y) * pl / self.gyration2)
                };
                // integrate large turns in small pieces so the lever arm stays current
                if dtheta.abs() > MAX_PUSH_TURN {
                    let k = MAX_PUSH_TURN / dtheta.abs();
                    shift *= k;
                    dtheta *= k;
                }
                let moved = Transform2::new(x.x + shift, x.y, x.angle);
                x = rotate_about(&moved, moved.translation(), dtheta);
            }
        }

        // squeeze phase: both fingers touch
        let mu = gripper.friction;
        let Some((mut xs, mut b)) = self.settle(&x, z, h, &mut buf) else {
            return Ok(failed(GraspFailure::SqueezedOut, x, a, iters));
        };
        let stable = |b: &Band| (b.v_right - b.v_left).abs() <= mu * (b.umax - b.umin);
        let step = (gripper.step / self.circumradius).min(MAX_SQUEEZE_TURN);
        let mut turned = 0.0;
        while !stable(&b) {
            tick(&mut iters)?;
            let dir = (b.v_right - b.v_left).signum();
            let pivot = Point2::new(0.0, 0.5 * (b.v_right + b.v_left));
            let turn = step.min(FRAC_PI_2 - turned);
            let Some((xn, bn)) = self.settle(&rotate_about(&xs, pivot, dir * turn), z, h, &mut buf) else {
                return Ok(failed(GraspFailure::SqueezedOut, xs, 0.5 * (b.umax - b.umin), iters));
            };
            turned += turn;
            // the couple vanishes or reverses somewhere in this turn: the
            // object settles there
            let settled = |b: &Band| stable(b) || (b.v_right - b.v_left).signum() != dir;
            if settled(&bn) {
                let (mut lo, mut hi) = (0.0, turn);
                let mut best = (xn, bn);
                for _ in 0..48 {
                    tick(&mut iters)?;
                    let mid = 0.5 * (lo + hi);
                    match self.settle(&rotate_about(&xs, pivot, dir * mid), z, h, &mut buf) {
                        Some((xm, bm)) if settled(&bm) => {
                            hi = mid;
                            best = (xm, bm);
                        }
                        _ => lo = mid,
                    }
                }
                xs = best.0;
                b = best.1;
                break;
            }
            xs = xn;
            b = bn;
            if turned >= FRAC_PI_2 {
                return Ok(failed(GraspFailure::SqueezedOut, xs, 0.5 * (b.umax - b.umin), iters));
            }
            if b.umax - b.umin <= 0.0 {
                return Ok(failed(GraspFailure::Closed, xs, 0.0, iters));
            }
        }
        a = 0.5 * (b.umax - b.umin);
        if a <= 0.0 {
            return Ok(failed(GraspFailure::Closed, xs, 0.0, iters));
        }
        if b.top_right - z < MIN_GRIP_DEPTH || b.top_left - z < MIN_GRIP_DEPTH {
            return Ok(failed(GraspFailure::ShallowGrip, xs, a, iters));
        }
        Ok((None, xs, a, iters))
    }

    /// Centres the object between touching fingers.
    fn settle(&self, x: &Transform2, z: f64, h: f64, buf: &mut Vec<(f64, f64, f64)>) -> Option<(Transform2, Band)> {
        let b = self.band(x, z, h, buf)?;
        let mid = 0.5 * (b.umax + b.umin);
        let xs = Transform2::new(x.x - mid, x.y, x.angle);
        let b = Band { umax: b.umax - mid, umin: b.umin - mid, ..b };
        Some((xs, b))
    }
}

/// Rounds a pose onto a fine grid (about 1e-9 mm, 1e-11 rad).
fn snap(x: Transform2) -> Transform2 {
    let q = |v: f64, k: f64| (v * k).round() / k;
    let p = (1u64 << 30) as f64;
    let r = (1u64 << 36) as f64;
    Transform2::new(q(x.x, p), q(x.y, p), q(x.angle, r))
}

fn half_turn(x: &Transform2) -> Transform2 {
    Transform2::new(-x.x, -x.y, wrap_angle(x.angle + PI))
}

fn rotate_about(x: &Transform2, pivot: Point2, angle: f64) -> Transform2 {
    let t = (x.translation() - pivot).rotate(angle) + pivot;
    Transform2::new(t.x, t.y, wrap_angle(x.angle + angle))
}

/// Object motion in world axes, measured as if the gripper sat where it was
/// planned.
fn apparent_displacement(
    planned: &Transform2,
    placed: &Transform2,
    in_hand: &Transform2,
    moved: bool,
) -> Displacement {
    if !moved {
        return Displacement::ZERO;
    }
    let p = planned.compose(in_hand);
    Displacement::new(p.x - placed.x, p.y - placed.y, 0.0, wrap_angle(p.angle - placed.angle))
}

/// One grasp trial on `part` placed at `pose`.
pub fn simulate_grasp(
    part: &Part,
    pose: &Pose,
    grasp: &Grasp,
    gripper: &GripperSpec,
    noise: &GraspNoise,
) -> Result<GraspOutcome, SimError> {
    SimPart::new(part).simulate(pose, grasp, gripper, noise)
}

/// Object pose after applying a world-axis displacement to its placement.
pub fn displaced(pose: &Pose, d: &Displacement) -> Transform2 {
    Transform2::new(pose.x + d.dx, pose.y + d.dy, wrap_angle(pose.theta + d.dtheta))
}

/// In-hand object pose the robot believes in after correcting by `est`.
pub fn estimated_in_hand(pose: &Pose, grasp: &Grasp, est: &Displacement) -> Transform2 {
    gripper_frame(pose, grasp).inverse().compose(&displaced(pose, est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Family, Polygon, Region};

    fn prism(w: f64, h: f64, z: f64) -> Part {
        let shape = Polygon::rectangle(Point2::new(-w / 2.0, -h / 2.0), Point2::new(w / 2.0, h / 2.0)).unwrap();
        Part::new(1, Family::Shape, vec![Region { shape, z_low: 0.0, z_high: z }], Transform2::IDENTITY, None)
            .unwrap()
    }

    #[test]
    fn centred_grasp_on_square_holds_still() {
        let p = prism(30.0, 30.0, 20.0);
        let out = simulate_grasp(&p, &Pose::default(), &Grasp::new(0.0, 0.0, 5.0, 0.0), &GripperSpec::default(), &GraspNoise::ZERO)
            .unwrap();
        assert!(out.lifted);
        assert!(out.displacement.planar_norm() < 0.1);
        assert!(out.displacement.dtheta.abs() < 0.01);
        assert!((out.opening - 15.0).abs() < 1e-9);
    }

    #[test]
    fn grasp_above_part_misses() {
        let p = prism(30.0, 30.0, 20.0);
        let out = simulate_grasp(&p, &Pose::default(), &Grasp::new(0.0, 0.0, 25.0, 0.0), &GripperSpec::default(), &GraspNoise::ZERO)
            .unwrap();
        assert!(!out.lifted);
        assert_eq!(out.displacement, Displacement::ZERO);
    }

    #[test]
    fn wide_part_blocks_descent() {
        let p = prism(100.0, 20.0, 20.0);
        let out = simulate_grasp(&p, &Pose::default(), &Grasp::new(0.0, 0.0, 5.0, 0.0), &GripperSpec::default(), &GraspNoise::ZERO)
            .unwrap();
        assert_eq!(out.failure, Some(GraspFailure::DescentCollision));
    }

    #[test]
    fn off_centre_grasp_recentres_object() {
        let p = prism(30.0, 30.0, 20.0);
        let out = simulate_grasp(&p, &Pose::default(), &Grasp::new(6.0, 0.0, 5.0, 0.0), &GripperSpec::default(), &GraspNoise::ZERO)
            .unwrap();
        assert!(out.lifted);
        assert!((out.displacement.dx - 6.0).abs() < 1e-9, "{:?}", out.displacement);
        assert!(out.displacement.dy.abs() < 1e-9);
    }

    #[test]
    fn half_turn_wrap() {
        assert_eq!(wrap_half_turn(FRAC_PI_2), -FRAC_PI_2);
        assert!((wrap_half_turn(PI - 0.1) + 0.1).abs() < 1e-12);
    }
}
