//! Grasp cascade: sample candidates, rank by GQN, estimate the post-grasp
//! displacement with GDN, rank the survivors by the task's IQN.
//!
//! Grasps use the dataset convention: `(x, y)` is the offset of the grasp
//! centre from the part's placement, in world axes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::world_grasp;
use crate::geometry::{Family, Part, Pose};
use crate::nets::{displacement_from_output, pose_vector, prepare_image, NetError, Scorer, Variant, Workspace};
use crate::physics::{sample_grasp, Displacement, Grasp};
use crate::render::{extract_patch, make_masks, render_depth, RenderError};
use crate::rng;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no {0} network loaded")]
    MissingNet(String),
    #[error("network {name}: {source}")]
    Net {
        name: String,
        #[source]
        source: NetError,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("planner needs at least one candidate and one survivor")]
    EmptyConfig,
}

/// The trained scorers: one GQN and one GDN shared by every task, one IQN per task.
#[derive(Debug, Clone)]
pub struct NetSet {
    pub gqn: Scorer<f32>,
    pub gdn: Scorer<f32>,
    pub iqn: BTreeMap<u8, Scorer<f32>>,
}

impl NetSet {
    pub fn new(gqn: Scorer<f32>, gdn: Scorer<f32>) -> Self {
        NetSet { gqn, gdn, iqn: BTreeMap::new() }
    }

    pub fn with_iqn(mut self, task: Family, iqn: Scorer<f32>) -> Self {
        self.iqn.insert(task.tag(), iqn);
        self
    }

    pub fn iqn(&self, task: Family) -> Option<&Scorer<f32>> {
        self.iqn.get(&task.tag())
    }

    pub fn file_name(variant: Variant, task: Option<Family>) -> String {
        match task {
            Some(t) => format!("{}-{}.gwts", variant.name(), t.name()),
            None => format!("{}.gwts", variant.name()),
        }
    }

    fn load_one(dir: &Path, name: String, variant: Variant) -> Result<Scorer<f32>, PlanError> {
        let path: PathBuf = dir.join(&name);
        if !path.exists() {
            return Err(PlanError::MissingNet(name));
        }
        let s = Scorer::load(&path).map_err(|source| PlanError::Net { name: name.clone(), source })?;
        if s.variant != variant {
            return Err(PlanError::Net { name, source: NetError::Format(format!("expected a {} file", variant.name())) });
        }
        Ok(s)
    }

    /// Loads `gqn.gwts`, `gdn.gwts` and whichever `iqn-{task}.gwts` exist.
    pub fn load(dir: &Path) -> Result<NetSet, PlanError> {
        let gqn = Self::load_one(dir, Self::file_name(Variant::Gqn, None), Variant::Gqn)?;
        let gdn = Self::load_one(dir, Self::file_name(Variant::Gdn, None), Variant::Gdn)?;
        let mut set = NetSet::new(gqn, gdn);
        for t in Family::ALL {
            let name = Self::file_name(Variant::Iqn, Some(t));
            if dir.join(&name).exists() {
                set = set.with_iqn(t, Self::load_one(dir, name, Variant::Iqn)?);
            }
        }
        Ok(set)
    }

    pub fn save(&self, dir: &Path) -> Result<(), NetError> {
        std::fs::create_dir_all(dir)?;
        self.gqn.save(&dir.join(Self::file_name(Variant::Gqn, None)))?;
        self.gdn.save(&dir.join(Self::file_name(Variant::Gdn, None)))?;
        for (&tag, s) in &self.iqn {
            let t = Family::from_tag(tag).expect("stored by family tag");
            s.save(&dir.join(Self::file_name(Variant::Iqn, Some(t))))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Grasps sampled per plan (M).
    pub candidates: usize,
    /// GQN survivors passed on to GDN and IQN (K).
    pub survivors: usize,
    pub gqn_threshold: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { candidates: 1000, survivors: 100, gqn_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    GqnOnly,
    GqnGdn,
    Full,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::GqnOnly, Mode::GqnGdn, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::GqnOnly => "gqn_only",
            Mode::GqnGdn => "gqn_gdn",
            Mode::Full => "full",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown mode {s:?} (expected gqn_only, gqn_gdn or full)"))
    }
}

/// Field order is the documented JSON key order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub mode: Mode,
    pub grasp: Grasp,
    pub displacement_estimate: Displacement,
    pub q_g: f64,
    /// IQN score of the chosen grasp; absent when the mode skips IQN.
    pub q_i: Option<f64>,
    pub candidate_index: usize,
    pub candidate_count: usize,
    pub survivor_count: usize,
    /// No candidate cleared the GQN threshold; survivors are the top K anyway.
    pub fallback: bool,
}

/// Every intermediate of one cascade run. All three modes are read off the
/// same candidate set, which is what makes ablations paired.
#[derive(Debug, Clone)]
pub struct Cascade {
    pub candidates: Vec<Grasp>,
    pub q_g: Vec<f64>,
    /// Candidate indices in descending `q_g` order.
    pub survivors: Vec<usize>,
    /// Per survivor, world axes.
    pub estimates: Vec<Displacement>,
    /// Per survivor; empty when IQN was skipped.
    pub q_i: Vec<f64>,
    pub fallback: bool,
}

const SCORE_BATCH: usize = 250;

fn score(s: &Scorer<f32>, images: &[f32], poses: &[f32], n: usize) -> Result<Vec<Vec<f64>>, NetError> {
    let il = s.arch.channels * s.arch.input_len();
    let pd = s.arch.pose_dim;
    let outs = s.arch.outputs;
    let mut ws = Workspace::new();
    let mut res = Vec::with_capacity(n);
    for lo in (0..n).step_by(SCORE_BATCH) {
        let b = SCORE_BATCH.min(n - lo);
        let p = s.predict(&mut ws, &images[lo * il..(lo + b) * il], &poses[lo * pd..(lo + b) * pd], b)?;
        res.extend(p.chunks(outs).map(|c| c.to_vec()));
    }
    Ok(res)
}

fn net_err(name: &str) -> impl Fn(NetError) -> PlanError + '_ {
    move |source| PlanError::Net { name: name.to_string(), source }
}

/// Descending by `key`, ties to the lower index.
fn descending(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Position of the best survivor: highest `q_i`, then highest `q_g`, then
/// smallest estimated displacement, then lowest candidate index.
pub fn rank_survivors(q_i: &[f64], q_g: &[f64], est_norm: &[f64], index: &[usize]) -> Option<usize> {
    (0..q_i.len()).min_by(|&a, &b| {
        q_i[b]
            .total_cmp(&q_i[a])
            .then(q_g[b].total_cmp(&q_g[a]))
            .then(est_norm[a].total_cmp(&est_norm[b]))
            .then(index[a].cmp(&index[b]))
    })
}

/// Runs the cascade; IQN is only evaluated when `with_iqn`.
pub fn cascade(
    part: &Part,
    pose: &Pose,
    nets: &NetSet,
    cfg: &PlannerConfig,
    seed: u64,
    with_iqn: bool,
) -> Result<Cascade, PlanError> {
    if cfg.candidates == 0 || cfg.survivors == 0 {
        return Err(PlanError::EmptyConfig);
    }
    let iqn = if with_iqn {
        Some(nets.iqn(part.family).ok_or_else(|| PlanError::MissingNet(format!("{} iqn", part.family)))?)
    } else {
        None
    };
    let depth = render_depth(part, pose)?;
    let mut r = rng::stream(rng::derive_named(seed, "plan"), 0);
    let candidates: Vec<Grasp> = (0..cfg.candidates).map(|_| sample_grasp(part, pose, &mut r)).collect();

    let side = nets.gqn.arch.input;
    let il = side * side;
    let mut images = vec![0.0f32; candidates.len() * il];
    let mut poses = vec![0.0f32; candidates.len() * 3];
    for (i, g) in candidates.iter().enumerate() {
        let patch = extract_patch(&depth, &world_grasp(pose, g), None);
        prepare_image(&patch.depth, None, side, &mut images[i * il..][..il]);
        pose_vector(g, None, &mut poses[i * 3..][..3]);
    }
    let q_g: Vec<f64> = score(&nets.gqn, &images, &poses, candidates.len()).map_err(net_err("gqn"))?.into_iter().map(|o| o[0]).collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| descending((q_g[a], a), (q_g[b], b)));
    let passing = order.iter().take_while(|&&i| q_g[i] >= cfg.gqn_threshold).count();
    let fallback = passing == 0;
    let keep = if fallback { cfg.survivors } else { passing.min(cfg.survivors) };
    let survivors: Vec<usize> = order[..keep.min(order.len())].to_vec();

    // GDN on the survivors, reusing the depth-only inputs
    let gside = nets.gdn.arch.input;
    let gil = gside * gside;
    let mut g_images = vec![0.0f32; survivors.len() * gil];
    let mut g_poses = vec![0.0f32; survivors.len() * 3];
    for (k, &i) in survivors.iter().enumerate() {
        if gside == side {
            g_images[k * gil..][..gil].copy_from_slice(&images[i * il..][..il]);
        } else {
            let patch = extract_patch(&depth, &world_grasp(pose, &candidates[i]), None);
            prepare_image(&patch.depth, None, gside, &mut g_images[k * gil..][..gil]);
        }
        g_poses[k * 3..][..3].copy_from_slice(&poses[i * 3..][..3]);
    }
    let estimates: Vec<Displacement> = score(&nets.gdn, &g_images, &g_poses, survivors.len())
        .map_err(net_err("gdn"))?
        .iter()
        .zip(&survivors)
        .map(|(o, &i)| displacement_from_output(o, candidates[i].theta))
        .collect();

    let q_i = match iqn {
        None => Vec::new(),
        Some(iqn) => {
            let masks = make_masks(part, pose, &depth);
            let side = iqn.arch.input;
            let il = 3 * side * side;
            let mut imgs = vec![0.0f32; survivors.len() * il];
            let mut ps = vec![0.0f32; survivors.len() * 7];
            for (k, &i) in survivors.iter().enumerate() {
                let patch = extract_patch(&depth, &world_grasp(pose, &candidates[i]), Some(&masks));
                let m = patch.masks.map(|[c, n]| [c, n].concat()).expect("masks requested");
                prepare_image(&patch.depth, Some(&m), side, &mut imgs[k * il..][..il]);
                pose_vector(&candidates[i], Some(&estimates[k]), &mut ps[k * 7..][..7]);
            }
            score(iqn, &imgs, &ps, survivors.len()).map_err(net_err("iqn"))?.into_iter().map(|o| o[0]).collect()
        }
    };
    Ok(Cascade { candidates, q_g, survivors, estimates, q_i, fallback })
}

impl Cascade {
    /// The grasp `mode` picks. `Full` needs the IQN scores.
    pub fn select(&self, mode: Mode) -> PlanResult {
        let (k, q_i) = match mode {
            Mode::GqnOnly | Mode::GqnGdn => (0, None),
            Mode::Full => {
                assert_eq!(self.q_i.len(), self.survivors.len(), "cascade ran without IQN");
                let q_g: Vec<f64> = self.survivors.iter().map(|&i| self.q_g[i]).collect();
                let norms: Vec<f64> = self.estimates.iter().map(|e| e.planar_norm()).collect();
                let k = rank_survivors(&self.q_i, &q_g, &norms, &self.survivors).expect("at least one survivor");
                (k, Some(self.q_i[k]))
            }
        };
        let i = self.survivors[k];
        let displacement_estimate = if mode == Mode::GqnOnly { Displacement::ZERO } else { self.estimates[k] };
        PlanResult {
            mode,
            grasp: self.candidates[i],
            displacement_estimate,
            q_g: self.q_g[i],
            q_i,
            candidate_index: i,
            candidate_count: self.candidates.len(),
            survivor_count: self.survivors.len(),
            fallback: self.fallback,
        }
    }
}

/// The full cascade.
pub fn plan(part: &Part, pose: &Pose, nets: &NetSet, cfg: &PlannerConfig, seed: u64) -> Result<PlanResult, PlanError> {
    plan_ablation(part, pose, nets, cfg, seed, Mode::Full)
}

pub fn plan_ablation(
    part: &Part,
    pose: &Pose,
    nets: &NetSet,
    cfg: &PlannerConfig,
    seed: u64,
    mode: Mode,
) -> Result<PlanResult, PlanError> {
    Ok(cascade(part, pose, nets, cfg, seed, mode == Mode::Full)?.select(mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_in_order() {
        let idx = [7, 3, 5];
        assert_eq!(rank_survivors(&[0.2, 0.9, 0.5], &[0.9, 0.6, 0.6], &[0.0; 3], &idx), Some(1));
        assert_eq!(rank_survivors(&[0.9, 0.9, 0.5], &[0.6, 0.7, 0.9], &[0.0; 3], &idx), Some(1));
        assert_eq!(rank_survivors(&[0.9, 0.9, 0.9], &[0.7, 0.7, 0.7], &[2.0, 1.0, 1.0], &idx), Some(1));
        assert_eq!(rank_survivors(&[0.9, 0.9, 0.9], &[0.7, 0.7, 0.7], &[1.0, 1.0, 1.0], &idx), Some(1));
        assert_eq!(rank_survivors(&[], &[], &[], &[]), None);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("best".parse::<Mode>().is_err());
    }
}
