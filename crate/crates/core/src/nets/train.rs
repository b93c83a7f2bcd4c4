//! Mini-batch momentum SGD, held-out metrics and the IQN curriculum.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{displacement_from_output, displacement_target, pose_vector, prepare_image, Arch, Scorer, Variant, Workspace};
use super::{sigmoid, NetError};
use crate::dataset::{DisplacementEstimator, TrialRecord};
use crate::geometry::Family;
use crate::physics::{Displacement, Grasp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Side of the down-sampled network input.
    pub input: usize,
    pub filters: [usize; 4],
    pub pose_units: usize,
    pub hidden: usize,
    /// Restore the parameters of the epoch with the lowest held-out loss
    /// (GQN and GDN).
    pub keep_best: bool,
    /// Epoch cap per curriculum stage.
    pub stage_epochs: usize,
    /// A stage has converged once held-out accuracy gains less than this
    /// over three epochs.
    pub stage_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            epochs: 8,
            batch: 64,
            lr: 1e-2,
            momentum: 0.9,
            input: 24,
            filters: [8, 16, 16, 32],
            pose_units: 32,
            hidden: 128,
            keep_best: true,
            stage_epochs: 6,
            stage_tolerance: 0.002,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self, v: Variant) -> Arch {
        Arch { input: self.input, ..Arch::new(v, self.filters, self.pose_units, self.hidden) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    Bce,
    SquaredError,
}

/// Mean binary cross-entropy of logits `z` against 0/1 targets, in log
/// space; returns the loss and writes `dL/dz` into `grad`.
pub fn bce_with_logits<T: super::Real>(z: &[T], y: &[T], grad: &mut [T]) -> f64 {
    let n = z.len() as f64;
    let mut loss = 0.0;
    for i in 0..z.len() {
        let zi = z[i].to_f64().unwrap();
        let yi = y[i].to_f64().unwrap();
        loss += zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p();
        grad[i] = T::from_f64((sigmoid(zi) - yi) / n);
    }
    loss / n
}

/// Sum of squared errors per sample, averaged over `batch` samples.
pub fn squared_error<T: super::Real>(pred: &[T], target: &[T], batch: usize, grad: &mut [T]) -> f64 {
    let mut loss = 0.0;
    for i in 0..pred.len() {
        let d = pred[i].to_f64().unwrap() - target[i].to_f64().unwrap();
        loss += d * d;
        grad[i] = T::from_f64(2.0 * d / batch as f64);
    }
    loss / batch as f64
}

/// Prepared network inputs and targets for one scorer.
#[derive(Debug, Clone, Default)]
pub struct Examples {
    pub side: usize,
    pub channels: usize,
    pub pose_dim: usize,
    pub outputs: usize,
    pub images: Vec<f32>,
    pub poses: Vec<f32>,
    pub targets: Vec<f32>,
    pub part_ids: Vec<u32>,
    /// Insertion errors (IQN examples only).
    pub eps: Vec<f32>,
}

impl Examples {
    fn build(records: &[&TrialRecord], v: Variant, side: usize) -> Examples {
        let c = v.channels();
        let pd = v.pose_dim();
        let n = records.len();
        let il = side * side;
        let mut ex = Examples {
            side,
            channels: c,
            pose_dim: pd,
            outputs: v.outputs(),
            images: vec![0.0; n * c * il],
            poses: vec![0.0; n * pd],
            targets: vec![0.0; n * v.outputs()],
            part_ids: records.iter().map(|r| r.part_id).collect(),
            eps: records.iter().map(|r| r.eps).collect(),
        };
        for (i, r) in records.iter().enumerate() {
            let masks = if v == Variant::Iqn { r.masks.as_deref() } else { None };
            prepare_image(&r.patch, masks, side, &mut ex.images[i * c * il..][..c * il]);
            let est = r.estimate_f64();
            pose_vector(&r.grasp_f64(), est.as_ref().filter(|_| v == Variant::Iqn), &mut ex.poses[i * pd..][..pd]);
            match v {
                Variant::Gqn => ex.targets[i] = r.lifted as u8 as f32,
                Variant::Gdn => {
                    let t = displacement_target(&r.displacement_f64(), r.grasp[3] as f64);
                    for k in 0..4 {
                        ex.targets[4 * i + k] = t[k] as f32;
                    }
                }
                Variant::Iqn => {}
            }
        }
        ex
    }

    /// Every record, labelled by lift success.
    pub fn gqn(records: &[TrialRecord], side: usize) -> Examples {
        Examples::build(&records.iter().collect::<Vec<_>>(), Variant::Gqn, side)
    }

    /// Lifted records only, with scaled grasp-frame displacement targets.
    pub fn gdn(records: &[TrialRecord], side: usize) -> Examples {
        Examples::build(&records.iter().filter(|r| r.lifted).collect::<Vec<_>>(), Variant::Gdn, side)
    }

    /// IQN inputs; labels are assigned per curriculum stage.
    pub fn iqn(records: &[TrialRecord], task: Family, side: usize) -> Examples {
        let keep: Vec<&TrialRecord> = records.iter().filter(|r| r.task == task && r.estimate.is_some()).collect();
        Examples::build(&keep, Variant::Iqn, side)
    }

    pub fn len(&self) -> usize {
        self.part_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.part_ids.is_empty()
    }

    pub fn set_labels(&mut self, label: impl Fn(f32) -> bool) {
        for (t, &e) in self.targets.iter_mut().zip(&self.eps) {
            *t = label(e) as u8 as f32;
        }
    }

    /// Train and held-out indices, split by part id.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| !crate::dataset::is_holdout(self.part_ids[i]))
    }

    fn gather(&self, idx: &[usize], images: &mut Vec<f32>, poses: &mut Vec<f32>, targets: &mut Vec<f32>) {
        let il = self.channels * self.side * self.side;
        images.clear();
        poses.clear();
        targets.clear();
        for &i in idx {
            images.extend_from_slice(&self.images[i * il..][..il]);
            poses.extend_from_slice(&self.poses[i * self.pose_dim..][..self.pose_dim]);
            targets.extend_from_slice(&self.targets[i * self.outputs..][..self.outputs]);
        }
    }
}

/// Area under the ROC curve (ties count half).
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    let sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Some((sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Eval {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    /// Root of the mean per-sample squared error, in network units.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub stage: usize,
    pub train_loss: f64,
    pub val: Eval,
    /// Held-out accuracy against the tightest curriculum threshold.
    pub val_accuracy_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub sigma: f64,
    pub epochs: usize,
    pub positive_rate: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stages: Vec<StageTrace>,
    /// Held-out RMSE of predicting the training mean (GDN).
    pub baseline_rmse: Option<f64>,
    /// Epoch whose parameters were kept, when not the last.
    pub best_epoch: Option<usize>,
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainReport {
    /// Held-out metrics of the parameters that were kept.
    pub fn final_val(&self) -> Option<&Eval> {
        match self.best_epoch {
            Some(k) => self.epochs.get(k).map(|e| &e.val),
            None => self.epochs.last().map(|e| &e.val),
        }
    }
}

struct Trainer {
    ws: Workspace<f32>,
    grads: Vec<f32>,
    velocity: Vec<f32>,
    images: Vec<f32>,
    poses: Vec<f32>,
    targets: Vec<f32>,
    d_out: Vec<f32>,
}

impl Trainer {
    fn new(n: usize) -> Trainer {
        Trainer {
            ws: Workspace::new(),
            grads: vec![0.0; n],
            velocity: vec![0.0; n],
            images: Vec::new(),
            poses: Vec::new(),
            targets: Vec::new(),
            d_out: Vec::new(),
        }
    }

    fn epoch(&mut self, s: &mut Scorer<f32>, ex: &Examples, train: &[usize], loss: Loss, cfg: &TrainConfig, epoch: usize) -> Result<f64, NetError> {
        let mut order = train.to_vec();
        order.shuffle(&mut crate::rng::stream(cfg.seed, 1000 + epoch as u64));
        let (mut total, mut count) = (0.0, 0usize);
        let (lr, mu) = (cfg.lr as f32, cfg.momentum as f32);
        for (bi, idx) in order.chunks(cfg.batch.max(1)).enumerate() {
            ex.gather(idx, &mut self.images, &mut self.poses, &mut self.targets);
            s.forward(&mut self.ws, &self.images, &self.poses, idx.len())?;
            self.d_out.clear();
            self.d_out.resize(self.targets.len(), 0.0);
            let l = match loss {
                Loss::Bce => bce_with_logits(self.ws.output(), &self.targets, &mut self.d_out),
                Loss::SquaredError => squared_error(self.ws.output(), &self.targets, idx.len(), &mut self.d_out),
            };
            if !l.is_finite() {
                return Err(NetError::NonFinite { epoch, batch: bi });
            }
            s.backward(&mut self.ws, &self.d_out, &mut self.grads);
            for ((p, v), g) in s.params.iter_mut().zip(&mut self.velocity).zip(&self.grads) {
                *v = mu * *v - lr * g;
                *p += *v;
            }
            total += l * idx.len() as f64;
            count += idx.len();
        }
        Ok(total / count.max(1) as f64)
    }
}

/// Outputs of `s` on the examples at `idx`, in batches.
pub fn outputs(s: &Scorer<f32>, ex: &Examples, idx: &[usize]) -> Result<Vec<f64>, NetError> {
    let mut ws = Workspace::new();
    let (mut im, mut po, mut ta) = (Vec::new(), Vec::new(), Vec::new());
    let mut out = Vec::with_capacity(idx.len() * ex.outputs);
    for chunk in idx.chunks(256) {
        ex.gather(chunk, &mut im, &mut po, &mut ta);
        s.forward(&mut ws, &im, &po, chunk.len())?;
        out.extend(ws.output().iter().map(|&v| v as f64));
    }
    Ok(out)
}

fn evaluate(s: &Scorer<f32>, ex: &Examples, idx: &[usize], loss: Loss) -> Result<Eval, NetError> {
    if idx.is_empty() {
        return Ok(Eval::default());
    }
    let out = outputs(s, ex, idx)?;
    let targets: Vec<f64> = idx.iter().flat_map(|&i| ex.targets[i * ex.outputs..][..ex.outputs].iter().map(|&t| t as f64)).collect();
    let mut g = vec![0.0; out.len()];
    Ok(match loss {
        Loss::Bce => {
            let labels: Vec<bool> = targets.iter().map(|&t| t > 0.5).collect();
            let correct = out.iter().zip(&labels).filter(|(&z, &l)| (z > 0.0) == l).count();
            Eval {
                loss: bce_with_logits(&out, &targets, &mut g),
                accuracy: Some(correct as f64 / idx.len() as f64),
                auc: auc(&out, &labels),
                rmse: None,
            }
        }
        Loss::SquaredError => {
            let l = squared_error(&out, &targets, idx.len(), &mut g);
            Eval { loss: l, accuracy: None, auc: None, rmse: Some(l.sqrt()) }
        }
    })
}

/// Runs `epochs` epochs on `train`, evaluating on `val` after each.
pub fn train_on(s: &mut Scorer<f32>, ex: &Examples, train: &[usize], val: &[usize], loss: Loss, cfg: &TrainConfig) -> Result<TrainReport, NetError> {
    if train.is_empty() {
        return Err(NetError::Empty(format!(" for {}", s.variant.name())));
    }
    let mut t = Trainer::new(s.params.len());
    let mut report = TrainReport { train_size: train.len(), val_size: val.len(), ..TrainReport::default() };
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    for epoch in 0..cfg.epochs {
        let train_loss = t.epoch(s, ex, train, loss, cfg, epoch)?;
        let v = evaluate(s, ex, val, loss)?;
        report.epochs.push(EpochStats { epoch, stage: 0, train_loss, val: v, val_accuracy_final: v.accuracy });
        if cfg.keep_best && !val.is_empty() && best.as_ref().is_none_or(|b| v.loss < b.0) {
            best = Some((v.loss, epoch, s.params.clone()));
        }
    }
    if let Some((_, epoch, params)) = best {
        if epoch + 1 < cfg.epochs {
            s.params = params;
            report.best_epoch = Some(epoch);
        }
    }
    Ok(report)
}

pub fn train_gqn(records: &[TrialRecord], cfg: &TrainConfig) -> Result<(Scorer<f32>, TrainReport), NetError> {
    let ex = Examples::gqn(records, cfg.input);
    let (train, val) = ex.split();
    let mut s = Scorer::init(Variant::Gqn, cfg.arch(Variant::Gqn), cfg.seed)?;
    let report = train_on(&mut s, &ex, &train, &val, Loss::Bce, cfg)?;
    Ok((s, report))
}

/// Starts from the GQN's conv filters; trains on lifted records only.
pub fn train_gdn(records: &[TrialRecord], gqn: &Scorer<f32>, cfg: &TrainConfig) -> Result<(Scorer<f32>, TrainReport), NetError> {
    let ex = Examples::gdn(records, gqn.arch.input);
    let (train, val) = ex.split();
    let arch = Arch { outputs: 4, ..gqn.arch };
    let mut s = Scorer::init(Variant::Gdn, arch, crate::rng::derive(cfg.seed, 2))?;
    s.copy_conv_from(gqn)?;
    let mut report = train_on(&mut s, &ex, &train, &val, Loss::SquaredError, cfg)?;
    if !val.is_empty() {
        let mut mean = [0.0f64; 4];
        for &i in &train {
            for k in 0..4 {
                mean[k] += ex.targets[4 * i + k] as f64 / train.len() as f64;
            }
        }
        let se: f64 = val
            .iter()
            .map(|&i| (0..4).map(|k| (ex.targets[4 * i + k] as f64 - mean[k]).powi(2)).sum::<f64>())
            .sum();
        report.baseline_rmse = Some((se / val.len() as f64).sqrt());
    }
    Ok((s, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub task: Family,
    pub thresholds: Vec<f64>,
}

/// Stage thresholds from loosest to tightest.
pub fn curriculum_for(task: Family) -> Curriculum {
    let thresholds = match task {
        Family::Bracket => vec![16.65, 8.32, 5.55, 4.16],
        Family::Gear => (1..=6).map(|k| -(k as f64)).collect(),
        Family::Shape => (1..=4).map(|k| -(k as f64)).collect(),
    };
    Curriculum { task, thresholds }
}

/// Insertion success at threshold `sigma`: distance below it for brackets,
/// peg or slot id at least `-sigma` for gears and shapes.
pub fn iqn_label(task: Family, eps: f64, sigma: f64) -> bool {
    match task {
        Family::Bracket => eps < sigma,
        _ => eps <= sigma,
    }
}

fn accuracy_at(s: &Scorer<f32>, ex: &Examples, val: &[usize], task: Family, sigma: f64) -> Result<f64, NetError> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let out = outputs(s, ex, val)?;
    let ok = out.iter().zip(val).filter(|(&z, &i)| (z > 0.0) == iqn_label(task, ex.eps[i] as f64, sigma)).count();
    Ok(ok as f64 / val.len() as f64)
}

/// IQN for one task. With `curriculum` each stage trains until held-out
/// accuracy stalls or the stage cap; otherwise `cfg.epochs` epochs directly
/// on the tightest threshold.
pub fn train_iqn(records: &[TrialRecord], task: Family, curriculum: bool, cfg: &TrainConfig) -> Result<(Scorer<f32>, TrainReport), NetError> {
    let mut ex = Examples::iqn(records, task, cfg.input);
    let (train, val) = ex.split();
    if train.is_empty() {
        return Err(NetError::Empty(format!(" for the {} IQN", task.name())));
    }
    let stages = curriculum_for(task).thresholds;
    let last = *stages.last().unwrap();
    let plan: Vec<f64> = if curriculum { stages } else { vec![last] };
    let mut s = Scorer::init(Variant::Iqn, cfg.arch(Variant::Iqn), crate::rng::derive(cfg.seed, 3))?;
    let mut t = Trainer::new(s.params.len());
    let mut report = TrainReport { train_size: train.len(), val_size: val.len(), ..TrainReport::default() };
    let mut epoch = 0;
    for (k, &sigma) in plan.iter().enumerate() {
        ex.set_labels(|e| iqn_label(task, e as f64, sigma));
        let cap = if curriculum { cfg.stage_epochs } else { cfg.epochs };
        let mut history = vec![accuracy_at(&s, &ex, &val, task, sigma)?];
        let mut ran = 0;
        while ran < cap {
            let train_loss = t.epoch(&mut s, &ex, &train, Loss::Bce, cfg, epoch)?;
            let val_eval = evaluate(&s, &ex, &val, Loss::Bce)?;
            let acc = val_eval.accuracy.unwrap_or(0.0);
            history.push(acc);
            let final_acc = if sigma == last { acc } else { accuracy_at(&s, &ex, &val, task, last)? };
            report.epochs.push(EpochStats { epoch, stage: k, train_loss, val: val_eval, val_accuracy_final: Some(final_acc) });
            epoch += 1;
            ran += 1;
            let n = history.len();
            if curriculum && n > 3 && history[n - 1] - history[n - 4] < cfg.stage_tolerance {
                break;
            }
        }
        let pos = train.iter().filter(|&&i| ex.targets[i] > 0.5).count() as f64 / train.len() as f64;
        report.stages.push(StageTrace { sigma, epochs: ran, positive_rate: pos, val_accuracy: *history.last().unwrap() });
    }
    Ok((s, report))
}

/// Wraps a trained GDN as a displacement estimator.
pub struct GdnEstimator {
    pub scorer: Scorer<f32>,
}

impl DisplacementEstimator for GdnEstimator {
    fn estimate(&self, patch: &[f32], grasp: &Grasp) -> Displacement {
        let side = self.scorer.arch.input;
        let mut image = vec![0.0f32; side * side];
        prepare_image(patch, None, side, &mut image);
        let mut pose = [0.0f32; 3];
        pose_vector(grasp, None, &mut pose);
        let mut ws = Workspace::new();
        match self.scorer.forward(&mut ws, &image, &pose, 1) {
            Ok(()) => {
                let out: Vec<f64> = ws.output().iter().map(|&v| v as f64).collect();
                displacement_from_output(&out, grasp.theta)
            }
            Err(_) => Displacement::ZERO,
        }
    }
}
