#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use taskgrasp::geometry::{Family, Part, Pose};
use taskgrasp::partgen::{self, GenConfig};
use taskgrasp::physics::{
    sample_grasp, GraspFailure, GraspNoise, GraspOutcome, Grasp, GripperSpec, SimPart,
};
use taskgrasp::rng;

pub struct Trial {
    pub part: SimPart,
    pub pose: Pose,
    pub grasp: Grasp,
}

fn outcome(t: &Trial, pose: &Pose, grasp: &Grasp, gripper: &GripperSpec) -> GraspOutcome {
    t.part.simulate(pose, grasp, gripper, &GraspNoise::ZERO).expect("simulation converges")
}

pub fn trivial(o: &GraspOutcome) -> bool {
    matches!(o.failure, Some(GraspFailure::Miss | GraspFailure::DescentCollision))
}

/// Random placements and grasps cycling through the families; with
/// `contact_only` the grasps that miss or hit the part on descent are skipped.
pub fn trials(seed: u64, n: usize, contact_only: bool) -> Vec<Trial> {
    let gripper = GripperSpec::default();
    let mut r = rng::stream(seed, 0);
    let mut out = Vec::with_capacity(n);
    let mut i = 0u64;
    while out.len() < n {
        let family = Family::ALL[i as usize % 3];
        let part = partgen::generate(&GenConfig::for_index(seed, family, i)).unwrap();
        i += 1;
        let pose = Pose::planar(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0), r.random_range(-PI..PI));
        let grasp = sample_grasp(&part, &pose, &mut r);
        let t = Trial { part: SimPart::new(&part), pose, grasp };
        if contact_only && trivial(&outcome(&t, &pose, &grasp, &gripper)) {
            continue;
        }
        out.push(t);
    }
    out
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Gap {
    pub xy: f64,
    pub theta: f64,
    pub s_mismatch: usize,
}

impl Gap {
    fn add(&mut self, a: &GraspOutcome, b: &GraspOutcome, rotate: f64) {
        let (s, c) = rotate.sin_cos();
        let (ax, ay) = (c * a.displacement.dx - s * a.displacement.dy, s * a.displacement.dx + c * a.displacement.dy);
        self.xy = self.xy.max((ax - b.displacement.dx).hypot(ay - b.displacement.dy));
        let dth = taskgrasp::geometry::wrap_angle(a.displacement.dtheta - b.displacement.dtheta);
        self.theta = self.theta.max(dth.abs());
        if a.lifted != b.lifted || a.displacement.dz != b.displacement.dz {
            self.s_mismatch += 1;
        }
    }
}

/// Worst disagreement when the whole scene is rotated by a random angle
/// about the world origin.
pub fn rotation_gap(ts: &[Trial], seed: u64) -> Gap {
    let g = GripperSpec::default();
    let mut r = rng::stream(seed, 1);
    let mut gap = Gap::default();
    for t in ts {
        let phi: f64 = r.random_range(-PI..PI);
        let (s, c) = phi.sin_cos();
        let p = &t.pose;
        let pose2 = Pose::planar(c * p.x - s * p.y, s * p.x + c * p.y, p.theta + phi);
        let gr = &t.grasp;
        let grasp2 = Grasp::new(c * gr.x - s * gr.y, s * gr.x + c * gr.y, gr.z, gr.theta + phi);
        gap.add(&outcome(t, p, gr, &g), &outcome(t, &pose2, &grasp2, &g), phi);
    }
    gap
}

/// Worst disagreement when the whole scene is shifted.
pub fn translation_gap(ts: &[Trial], seed: u64) -> Gap {
    let g = GripperSpec::default();
    let mut r = rng::stream(seed, 2);
    let mut gap = Gap::default();
    for t in ts {
        let (dx, dy) = (r.random_range(-15.0..15.0), r.random_range(-15.0..15.0));
        let pose2 = Pose::planar(t.pose.x + dx, t.pose.y + dy, t.pose.theta);
        gap.add(&outcome(t, &t.pose, &t.grasp, &g), &outcome(t, &pose2, &t.grasp, &g), 0.0);
    }
    gap
}

/// Worst disagreement between two closure steps.
pub fn step_gap(ts: &[Trial], coarse: f64, fine: f64) -> Gap {
    let a = GripperSpec { step: coarse, ..GripperSpec::default() };
    let b = GripperSpec { step: fine, ..GripperSpec::default() };
    let mut gap = Gap::default();
    for t in ts {
        gap.add(&outcome(t, &t.pose, &t.grasp, &a), &outcome(t, &t.pose, &t.grasp, &b), 0.0);
    }
    gap
}

/// A gear whose bottom layer is a wide rim, grasped on the rim away from the hole.
pub fn rim_gear() -> (Part, Pose, Grasp) {
    use taskgrasp::partgen::{build_gear, GearLayer};
    let part = build_gear(
        7,
        &[
            GearLayer { radius: 38.0, sides: 40, phase: 0.0, height: 6.0 },
            GearLayer { radius: 14.0, sides: 12, phase: 0.0, height: 8.0 },
        ],
    )
    .unwrap();
    (part, Pose::planar(0.0, 0.0, 0.0), Grasp::new(28.0, 0.0, 3.0, std::f64::consts::FRAC_PI_2))
}

pub mod nets;
pub mod invariants;

/// Lifted trials under default noise, one per part.
pub fn lifted_trials(family: Family, n: usize, seed: u64) -> Vec<(Part, Pose, Grasp, GraspOutcome)> {
    let mut r = rng::stream(seed, 0);
    let noise = taskgrasp::physics::NoiseSpec::default();
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < n {
        let part = partgen::generate(&GenConfig::for_index(seed, family, i)).unwrap();
        i += 1;
        let sim = SimPart::new(&part);
        let pose = Pose::planar(0.0, 0.0, 0.5);
        for _ in 0..20 {
            let g = sample_grasp(&part, &pose, &mut r);
            let o = sim.simulate(&pose, &g, &GripperSpec::default(), &noise.sample(&mut r)).unwrap();
            if o.lifted {
                out.push((part.clone(), pose, g, o));
                break;
            }
        }
    }
    out
}

/// Inserts lifted gears onto each peg alone with perturbed estimates.
/// Returns (cases checked, cases where a tighter peg fits but a looser one
/// does not, or the full ladder disagrees with the single-peg runs).
pub fn gear_monotone_exceptions(n: usize, seed: u64) -> (usize, usize) {
    use taskgrasp::partgen::PEG_DIAMETERS;
    use taskgrasp::physics::{simulate_insertion, Assembly, Displacement, TaskParams};
    let gripper = GripperSpec::default();
    let mut r = rng::stream(seed, 1);
    let (mut checked, mut bad) = (0, 0);
    for (part, pose, g, o) in lifted_trials(Family::Gear, n, seed) {
        let task = TaskParams::for_part(&part).unwrap();
        for _ in 0..5 {
            let err = Displacement::new(
                o.displacement.dx + r.random_range(-0.6..0.6),
                o.displacement.dy + r.random_range(-0.6..0.6),
                0.0,
                o.displacement.dtheta,
            );
            let ok: Vec<bool> = PEG_DIAMETERS
                .iter()
                .map(|&d| {
                    let one = TaskParams { assembly: Assembly::Pegs(vec![d]), ..task.clone() };
                    simulate_insertion(&part, &pose, &g, &o, &err, &one, &gripper) == -1.0
                })
                .collect();
            let best = ok.iter().rposition(|&b| b).map_or(0.0, |k| -((k + 1) as f64));
            checked += 1;
            if (1..ok.len()).any(|k| ok[k] && !ok[k - 1])
                || simulate_insertion(&part, &pose, &g, &o, &err, &task, &gripper) != best
            {
                bad += 1;
            }
        }
    }
    (checked, bad)
}
