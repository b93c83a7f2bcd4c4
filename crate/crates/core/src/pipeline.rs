//! The end-to-end desk run: generate parts, collect, train one cascade per
//! training seed, evaluate the ablations and compare curriculum training.
//!
//! Directory layout under the output root:
//!
//! ```text
//! parts/train/*.json  parts/eval/*.json
//! data/gq-NNNN.grsp   data/gq.manifest
//! seed-S/data/iqn-*   seed-S/nets/*.gwts   seed-S/eval/{report.csv,…}
//! curves.csv  figs/curriculum-*.svg  summary.json
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{collect_gq_gd, collect_iqn, write_collection, CollectConfig, CollectStats, DatasetError};
use crate::eval::{emit_curves, emit_figures, METRICS, run_eval, CurvePoint, CurveTable, EvalConfig, EvalError, EvalReport};
use crate::geometry::{Family, Part};
use crate::nets::{train_gdn, train_gqn, train_iqn, GdnEstimator, NetError, TrainConfig, TrainReport};
use crate::partgen::{generate, GenConfig, GenError};
use crate::planner::{Mode, NetSet, PlannerConfig};
use crate::rng;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("part file {path}: {source}")]
    PartFile {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Training parts per family.
    pub train_parts: usize,
    /// Held-out evaluation parts per family.
    pub eval_parts: usize,
    pub gq_trials: usize,
    /// Lifted IQN records per task.
    pub iqn_trials: usize,
    /// Evaluation trials per task (every mode runs on each).
    pub eval_trials: usize,
    pub training_seeds: Vec<u64>,
    /// Also train direct IQNs for the curriculum comparison.
    pub compare_curriculum: bool,
    pub workers: usize,
    pub train: TrainConfig,
    pub planner: PlannerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            train_parts: 200,
            eval_parts: 100,
            gq_trials: 20_000,
            iqn_trials: 8_000,
            eval_trials: 200,
            training_seeds: vec![1, 2, 3],
            compare_curriculum: true,
            workers: 1,
            train: TrainConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub generate: f64,
    pub collect: f64,
    /// Cascade training (GQN, GDN and curriculum IQNs) over all seeds.
    pub train: f64,
    /// Direct IQNs for the curriculum comparison.
    pub compare: f64,
    pub evaluate: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub gqn: TrainReport,
    pub gdn: TrainReport,
    pub iqn: Vec<(Family, TrainReport)>,
    pub iqn_stats: Vec<CollectStats>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub gq_stats: CollectStats,
    pub runs: Vec<SeedRun>,
    pub curves: Vec<CurveTable>,
    pub timings: Timings,
}

impl PipelineOutput {
    /// Median over training seeds of one (mode, task) metric.
    pub fn median_metric(&self, mode: Mode, task: Family, metric: &str) -> Option<f64> {
        let mut v: Vec<f64> = self.runs.iter().filter_map(|r| r.report.get(mode, task)?.metric(metric)).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }

    /// Per (task, mode, metric): the median over training seeds, then each seed's value.
    pub fn ablation_csv(&self) -> String {
        let mut s = String::from("task,mode,metric,median");
        for r in &self.runs {
            s += &format!(",seed_{}", r.seed);
        }
        s.push('\n');
        for task in Family::ALL {
            for mode in Mode::ALL {
                for metric in METRICS {
                    let Some(m) = self.median_metric(mode, task, metric) else { continue };
                    s += &format!("{task},{mode},{metric},{m:.6}");
                    for r in &self.runs {
                        let v = r.report.get(mode, task).and_then(|x| x.metric(metric)).unwrap_or(f64::NAN);
                        s += &format!(",{v:.6}");
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}

pub fn part_file_name(family: Family, index: usize) -> String {
    format!("{family}-{index:04}.json")
}

/// Writes `count` parts of `family` as `{family}-NNNN.json` plus
/// `{family}.manifest` (one `file seed family` line per part).
pub fn write_family(dir: &Path, seed: u64, family: Family, count: usize) -> Result<Vec<Part>, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut parts = Vec::with_capacity(count);
    for i in 0..count {
        let g = GenConfig::for_index(seed, family, i as u64);
        let part = generate(&g)?;
        let name = part_file_name(family, i);
        let body = serde_json::to_string(&part).map_err(|source| PipelineError::PartFile { path: dir.join(&name), source })?;
        std::fs::write(dir.join(&name), body + "\n")?;
        manifest += &format!("{name} {} {family}\n", g.seed);
        parts.push(part);
    }
    std::fs::write(dir.join(format!("{family}.manifest")), manifest)?;
    Ok(parts)
}

pub fn load_part(path: &Path) -> Result<Part, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| PipelineError::PartFile { path: path.into(), source })
}

/// Every `*.json` part in `dir`, in file-name order.
pub fn load_parts(dir: &Path) -> Result<Vec<Part>, PipelineError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths.iter().map(|p| load_part(p)).collect()
}

/// Ids of the parts a net set was trained on, one hex id per line.
pub const TRAINING_IDS_FILE: &str = "training-parts.txt";

pub fn write_training_ids(dir: &Path, ids: &BTreeSet<u32>) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let body: String = ids.iter().map(|id| format!("{id:08x}\n")).collect();
    std::fs::write(dir.join(TRAINING_IDS_FILE), body)
}

pub fn read_training_ids(dir: &Path) -> std::io::Result<BTreeSet<u32>> {
    let path = dir.join(TRAINING_IDS_FILE);
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| u32::from_str_radix(l.trim(), 16).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        .collect()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn add_curve(table: &mut CurveTable, seed: u64, curriculum: bool, rep: &TrainReport) {
    table.points.extend(rep.epochs.iter().map(|e| CurvePoint {
        curriculum,
        seed,
        epoch: e.epoch,
        stage: e.stage,
        accuracy: e.val_accuracy_final.unwrap_or(0.0),
    }));
}

/// Runs everything into `out`. `log` receives one line per step.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<PipelineOutput, PipelineError> {
    let start = Instant::now();
    let mut t = Timings::default();

    let t0 = Instant::now();
    let mut train_parts = Vec::new();
    let mut eval_parts = Vec::new();
    for f in Family::ALL {
        train_parts.extend(write_family(&out.join("parts/train"), rng::derive_named(cfg.seed, "train-parts"), f, cfg.train_parts)?);
        eval_parts.extend(write_family(&out.join("parts/eval"), rng::derive_named(cfg.seed, "eval-parts"), f, cfg.eval_parts)?);
    }
    let training_ids: BTreeSet<u32> = train_parts.iter().map(|p| p.id).collect();
    // ids are 32-bit hashes; skip the rare held-out part that collides
    eval_parts.retain(|p| !training_ids.contains(&p.id));
    t.generate = secs(t0.elapsed());
    log(&format!("generated {} training and {} held-out parts in {:.1}s", train_parts.len(), eval_parts.len(), t.generate));

    let collect = CollectConfig { seed: cfg.seed, trials: cfg.gq_trials, workers: cfg.workers, ..CollectConfig::default() };
    let t0 = Instant::now();
    let gq = collect_gq_gd(&train_parts, &collect)?;
    write_collection(&out.join("data"), &gq)?;
    t.collect += secs(t0.elapsed());
    let lifted = gq.records.iter().filter(|r| r.lifted).count();
    log(&format!("collected {} grasp records ({lifted} lifted) in {:.1}s", gq.records.len(), secs(t0.elapsed())));

    let mut runs = Vec::new();
    let mut curves: Vec<CurveTable> = Family::ALL.iter().map(|&task| CurveTable { task, points: Vec::new() }).collect();
    for &seed in &cfg.training_seeds {
        let dir = out.join(format!("seed-{seed}"));
        let tc = TrainConfig { seed, ..cfg.train };
        let t0 = Instant::now();
        let (gqn, gqn_rep) = train_gqn(&gq.records, &tc)?;
        let (gdn, gdn_rep) = train_gdn(&gq.records, &gqn, &tc)?;
        t.train += secs(t0.elapsed());
        log(&format!(
            "seed {seed}: gqn auc {:.3}, gdn rmse {:.3} vs baseline {:.3} ({:.1}s)",
            gqn_rep.final_val().and_then(|e| e.auc).unwrap_or(f64::NAN),
            gdn_rep.final_val().and_then(|e| e.rmse).unwrap_or(f64::NAN),
            gdn_rep.baseline_rmse.unwrap_or(f64::NAN),
            secs(t0.elapsed())
        ));
        let estimator = GdnEstimator { scorer: gdn };
        let mut iqn_reports = Vec::new();
        let mut iqn_stats = Vec::new();
        let mut nets = NetSet::new(gqn, estimator.scorer.clone());
        for task in Family::ALL {
            let t0 = Instant::now();
            let c = CollectConfig { seed: rng::derive(cfg.seed, seed), trials: cfg.iqn_trials, ..collect };
            let data = collect_iqn(&train_parts, task, &c, &estimator)?;
            write_collection(&dir.join("data"), &data)?;
            t.collect += secs(t0.elapsed());
            let t1 = Instant::now();
            let (iqn, rep) = train_iqn(&data.records, task, true, &tc)?;
            t.train += secs(t1.elapsed());
            log(&format!(
                "seed {seed}: {task} iqn on {} records, {} epochs over {} stages, final accuracy {:.3} ({:.1}s collect, {:.1}s train)",
                data.records.len(),
                rep.epochs.len(),
                rep.stages.len(),
                rep.epochs.last().and_then(|e| e.val_accuracy_final).unwrap_or(f64::NAN),
                secs(t1 - t0),
                secs(t1.elapsed())
            ));
            if cfg.compare_curriculum {
                let t2 = Instant::now();
                let budget = TrainConfig { epochs: rep.epochs.len().max(1), ..tc };
                let (_, direct) = train_iqn(&data.records, task, false, &budget)?;
                t.compare += secs(t2.elapsed());
                let table = &mut curves[task.tag() as usize];
                add_curve(table, seed, true, &rep);
                add_curve(table, seed, false, &direct);
            }
            nets = nets.with_iqn(task, iqn);
            iqn_reports.push((task, rep));
            iqn_stats.push(data.stats);
        }
        nets.save(&dir.join("nets"))?;
        write_training_ids(&dir.join("nets"), &training_ids)?;

        let t0 = Instant::now();
        let ecfg = EvalConfig {
            seed: rng::derive_named(cfg.seed, "eval"),
            trials: cfg.eval_trials,
            workers: cfg.workers,
            planner: cfg.planner,
            ..EvalConfig::default()
        };
        let report = run_eval(&eval_parts, &training_ids, &nets, &ecfg)?;
        emit_figures(&report, &[], &dir.join("eval"))?;
        t.evaluate += secs(t0.elapsed());
        log(&format!("seed {seed}: evaluated {} trials in {:.1}s", report.rows.len(), secs(t0.elapsed())));
        runs.push(SeedRun { seed, gqn: gqn_rep, gdn: gdn_rep, iqn: iqn_reports, iqn_stats, report });
    }
    if !cfg.compare_curriculum {
        curves.clear();
    }
    if !curves.is_empty() {
        emit_curves(&curves, out)?;
    }
    t.total = secs(start.elapsed());
    let output = PipelineOutput { gq_stats: gq.stats, runs, curves, timings: t };
    std::fs::write(out.join("ablation.csv"), output.ablation_csv())?;
    let summary = serde_json::json!({
        "config": cfg,
        "timings": output.timings,
        "gq": output.gq_stats,
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n")?;
    Ok(output)
}
