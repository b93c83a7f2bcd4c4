//! Simulation evaluation of the planner ablations on held-out parts, and
//! the curriculum-versus-direct IQN comparison.

mod figures;

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use figures::{emit_curves, emit_figures, report_csv, svg_bars, svg_curves, trials_csv, FigureFiles, METRICS};

use crate::dataset::{random_pose, TrialRecord};
use crate::geometry::{Family, Part};
use crate::nets::{train_iqn, NetError, TrainConfig};
use crate::physics::{simulate_insertion, GripperSpec, NoiseSpec, SimPart, TaskParams};
use crate::planner::{cascade, Mode, NetSet, PlanError, PlannerConfig};
use crate::rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("part {0:#010x} was also used for training")]
    Overlap(u32),
    #[error("no held-out {0} parts")]
    NoParts(Family),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    /// Trials per task; every mode runs on the same trials.
    pub trials: usize,
    pub modes: Vec<Mode>,
    pub tasks: Vec<Family>,
    pub planner: PlannerConfig,
    pub gripper: GripperSpec,
    pub noise: NoiseSpec,
    pub placement: f64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            trials: 200,
            modes: Mode::ALL.to_vec(),
            tasks: Family::ALL.to_vec(),
            planner: PlannerConfig::default(),
            gripper: GripperSpec::default(),
            noise: NoiseSpec::default(),
            placement: 15.0,
            workers: 1,
        }
    }
}

/// One (trial, mode) outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub task: Family,
    pub trial: usize,
    pub part_id: u32,
    pub mode: Mode,
    pub candidate_index: usize,
    pub fallback: bool,
    pub q_g: f64,
    pub q_i: Option<f64>,
    pub lifted: bool,
    pub sim_error: bool,
    /// World-axis `[dx, dy, dz, dθ]`.
    pub estimate: [f64; 4],
    pub truth: [f64; 4],
    /// Insertion error of a lifted grasp: mm for brackets, minus the best
    /// peg or slot id for gears and shapes.
    pub eps: Option<f64>,
}

/// Aggregates for one (mode, task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mode: Mode,
    pub task: Family,
    pub trials: usize,
    pub lifted: usize,
    pub lift_rate: f64,
    /// Over lifted trials only.
    pub rmse_translation: f64,
    pub rmse_rotation: f64,
    /// Bracket: mean and std of the insertion error (mm). Gear and shape:
    /// mean and std of the best peg or slot id.
    pub insertion_mean: f64,
    pub insertion_std: f64,
    /// Gear and shape: lifted trials whose best id is `k`, for `k = 0..`.
    pub id_histogram: Vec<usize>,
}

impl ModeMetrics {
    /// Folds per-trial rows in order.
    pub fn from_rows(mode: Mode, task: Family, rows: &[&TrialRow]) -> ModeMetrics {
        let lifted: Vec<&&TrialRow> = rows.iter().filter(|r| r.lifted).collect();
        let n = lifted.len();
        let mean = |f: &dyn Fn(&TrialRow) -> f64| if n == 0 { 0.0 } else { lifted.iter().map(|r| f(r)).sum::<f64>() / n as f64 };
        let rmse_translation = mean(&|r| (r.estimate[0] - r.truth[0]).powi(2) + (r.estimate[1] - r.truth[1]).powi(2)).sqrt();
        let rmse_rotation = mean(&|r| (r.estimate[3] - r.truth[3]).powi(2)).sqrt();
        let score = |r: &TrialRow| {
            let e = r.eps.unwrap_or(0.0);
            if task == Family::Bracket { e } else { -e }
        };
        let insertion_mean = mean(&|r| score(r));
        let insertion_std = mean(&|r| (score(r) - insertion_mean).powi(2)).sqrt();
        let mut id_histogram = Vec::new();
        if task != Family::Bracket {
            for r in &lifted {
                let k = score(r).round().max(0.0) as usize;
                if id_histogram.len() <= k {
                    id_histogram.resize(k + 1, 0);
                }
                id_histogram[k] += 1;
            }
        }
        ModeMetrics {
            mode,
            task,
            trials: rows.len(),
            lifted: n,
            lift_rate: if rows.is_empty() { 0.0 } else { n as f64 / rows.len() as f64 },
            rmse_translation,
            rmse_rotation,
            insertion_mean,
            insertion_std,
            id_histogram,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "trials" => self.trials as f64,
            "lifted" => self.lifted as f64,
            "lift_rate" => self.lift_rate,
            "rmse_translation" => self.rmse_translation,
            "rmse_rotation" => self.rmse_rotation,
            "insertion_mean" => self.insertion_mean,
            "insertion_std" => self.insertion_std,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub config_sha256: String,
    pub metrics: Vec<ModeMetrics>,
    pub rows: Vec<TrialRow>,
}

impl EvalReport {
    pub fn get(&self, mode: Mode, task: Family) -> Option<&ModeMetrics> {
        self.metrics.iter().find(|m| m.mode == mode && m.task == task)
    }

    /// Recomputes every aggregate from the per-trial rows.
    pub fn aggregate(rows: &[TrialRow], modes: &[Mode], tasks: &[Family]) -> Vec<ModeMetrics> {
        let mut out = Vec::new();
        for &task in tasks {
            for &mode in modes {
                let sel: Vec<&TrialRow> = rows.iter().filter(|r| r.mode == mode && r.task == task).collect();
                out.push(ModeMetrics::from_rows(mode, task, &sel));
            }
        }
        out
    }
}

fn config_sha(cfg: &EvalConfig, parts: &[Part], nets: &NetSet) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serialises"));
    for p in parts {
        h.update(p.id.to_le_bytes());
    }
    h.update(nets.gqn.to_bytes());
    h.update(nets.gdn.to_bytes());
    for s in nets.iqn.values() {
        h.update(s.to_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs every mode on the same `(part, pose, noise)` draws and the same
/// candidate set per trial. Parts whose id appears in `training_ids` are
/// rejected.
pub fn run_eval(parts: &[Part], training_ids: &BTreeSet<u32>, nets: &NetSet, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if let Some(p) = parts.iter().find(|p| training_ids.contains(&p.id)) {
        return Err(EvalError::Overlap(p.id));
    }
    let full = cfg.modes.contains(&Mode::Full);
    let mut rows = Vec::new();
    for &task in &cfg.tasks {
        let pool: Vec<&Part> = parts.iter().filter(|p| p.family == task).collect();
        if pool.is_empty() {
            return Err(EvalError::NoParts(task));
        }
        let sims: Vec<SimPart> = pool.iter().map(|p| SimPart::new(p)).collect();
        let fixtures = pool.iter().map(|p| TaskParams::for_part(p)).collect::<Result<Vec<_>, _>>()?;
        let seed = rng::derive_named(cfg.seed, &format!("eval-{}", task.name()));
        let per_trial = crate::par::map_indexed(0..cfg.trials, cfg.workers, |t| -> Result<Vec<TrialRow>, EvalError> {
            let mut r = rng::stream(seed, t as u64);
            let k = r.random_range(0..pool.len());
            let part = pool[k];
            let pose = random_pose(&mut r, cfg.placement);
            let noise = cfg.noise.sample(&mut r);
            let c = cascade(part, &pose, nets, &cfg.planner, rng::derive(seed, t as u64), full)?;
            let mut out = Vec::with_capacity(cfg.modes.len());
            for &mode in &cfg.modes {
                let plan = c.select(mode);
                let sim = sims[k].simulate(&pose, &plan.grasp, &cfg.gripper, &noise);
                let (lifted, truth, eps) = match &sim {
                    Ok(o) if o.lifted => {
                        let e = simulate_insertion(part, &pose, &plan.grasp, o, &plan.displacement_estimate, &fixtures[k], &cfg.gripper);
                        (true, o.displacement.to_array(), Some(e))
                    }
                    Ok(o) => (false, o.displacement.to_array(), None),
                    Err(_) => (false, [0.0; 4], None),
                };
                out.push(TrialRow {
                    task,
                    trial: t,
                    part_id: part.id,
                    mode,
                    candidate_index: plan.candidate_index,
                    fallback: plan.fallback,
                    q_g: plan.q_g,
                    q_i: plan.q_i,
                    lifted,
                    sim_error: sim.is_err(),
                    estimate: plan.displacement_estimate.to_array(),
                    truth,
                    eps,
                });
            }
            Ok(out)
        });
        for r in per_trial {
            rows.extend(r?);
        }
    }
    let metrics = EvalReport::aggregate(&rows, &cfg.modes, &cfg.tasks);
    Ok(EvalReport { seed: cfg.seed, config_sha256: config_sha(cfg, parts, nets), metrics, rows })
}

/// One point of a validation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub curriculum: bool,
    pub seed: u64,
    pub epoch: usize,
    pub stage: usize,
    /// Held-out accuracy against the tightest threshold.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub task: Family,
    pub points: Vec<CurvePoint>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl CurveTable {
    pub fn curve(&self, curriculum: bool, seed: u64) -> Vec<f64> {
        self.points.iter().filter(|p| p.curriculum == curriculum && p.seed == seed).map(|p| p.accuracy).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.seed).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn median_final(&self, curriculum: bool) -> Option<f64> {
        median(self.seeds().into_iter().filter_map(|s| self.curve(curriculum, s).last().copied()).collect())
    }

    /// Per seed, epochs the curriculum run needs to match the direct run's
    /// final accuracy (`None` if it never does), alongside the direct run's
    /// epoch count.
    pub fn epochs_to_match(&self) -> Vec<(u64, Option<usize>, usize)> {
        self.seeds()
            .into_iter()
            .map(|s| {
                let direct = self.curve(false, s);
                let target = direct.last().copied().unwrap_or(0.0);
                let reached = self.curve(true, s).iter().position(|&a| a >= target).map(|i| i + 1);
                (s, reached, direct.len())
            })
            .collect()
    }
}

/// Trains the task's IQN with and without the curriculum for each seed.
/// The direct run gets as many epochs as the curriculum used, and both are
/// scored on the same held-out split.
pub fn compare_curriculum(records: &[TrialRecord], task: Family, seeds: &[u64], cfg: &TrainConfig) -> Result<CurveTable, EvalError> {
    let mut points = Vec::new();
    for &seed in seeds {
        let c = TrainConfig { seed, ..*cfg };
        let (_, cur) = train_iqn(records, task, true, &c)?;
        let budget = cur.epochs.len().max(1);
        let (_, dir) = train_iqn(records, task, false, &TrainConfig { epochs: budget, ..c })?;
        for (curriculum, rep) in [(true, &cur), (false, &dir)] {
            points.extend(rep.epochs.iter().map(|e| CurvePoint {
                curriculum,
                seed,
                epoch: e.epoch,
                stage: e.stage,
                accuracy: e.val_accuracy_final.unwrap_or(0.0),
            }));
        }
    }
    Ok(CurveTable { task, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: Mode, lifted: bool, est: f64, truth: f64, eps: Option<f64>) -> TrialRow {
        TrialRow {
            task: Family::Gear,
            trial: 0,
            part_id: 1,
            mode,
            candidate_index: 0,
            fallback: false,
            q_g: 0.9,
            q_i: None,
            lifted,
            sim_error: false,
            estimate: [est, 0.0, 0.0, 0.0],
            truth: [truth, 0.0, 0.0, 0.1],
            eps,
        }
    }

    #[test]
    fn metrics_only_count_lifts() {
        let rows = [
            row(Mode::Full, true, 1.0, 4.0, Some(-3.0)),
            row(Mode::Full, true, 0.0, 4.0, Some(-5.0)),
            row(Mode::Full, false, 0.0, 40.0, None),
        ];
        let refs: Vec<&TrialRow> = rows.iter().collect();
        let m = ModeMetrics::from_rows(Mode::Full, Family::Gear, &refs);
        assert_eq!((m.trials, m.lifted), (3, 2));
        assert!((m.lift_rate - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.rmse_translation - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((m.rmse_rotation - 0.1).abs() < 1e-12);
        assert_eq!(m.insertion_mean, 4.0);
        assert_eq!(m.insertion_std, 1.0);
        assert_eq!(m.id_histogram, vec![0, 0, 0, 1, 0, 1]);
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(vec![3.0, 1.0, 2.0, 10.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
