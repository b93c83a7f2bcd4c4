//! Fixed workloads shared by the benchmarks.

use taskgrasp::dataset::random_pose;
use taskgrasp::partgen::{self, GenConfig};
use taskgrasp::physics::{sample_grasp, GraspNoise, SimPart};
use taskgrasp::{rng, Family, Grasp, NetSet, Part, Pose, Scorer, TrainConfig, Variant};

pub struct Scene {
    pub part: Part,
    pub sim: SimPart,
    pub pose: Pose,
    pub grasp: Grasp,
    pub noise: GraspNoise,
}

/// `n` random scenes cycling through the three families.
pub fn scenes(n: usize, seed: u64) -> Vec<Scene> {
    let noise_spec = taskgrasp::NoiseSpec::default();
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|i| {
            let part = partgen::generate(&GenConfig::for_index(seed, Family::ALL[i % 3], i as u64)).expect("generator succeeds");
            let pose = random_pose(&mut r, 15.0);
            let grasp = sample_grasp(&part, &pose, &mut r);
            let noise = noise_spec.sample(&mut r);
            Scene { sim: SimPart::new(&part), part, pose, grasp, noise }
        })
        .collect()
}

/// Untrained networks of the default shape; timing does not depend on weights.
pub fn nets() -> NetSet {
    let cfg = TrainConfig::default();
    let s = |v, k| Scorer::init(v, cfg.arch(v), k).expect("default arch is valid");
    let mut n = NetSet::new(s(Variant::Gqn, 1), s(Variant::Gdn, 2));
    for t in Family::ALL {
        n = n.with_iqn(t, s(Variant::Iqn, 3));
    }
    n
}
