//! Self-supervised trial collection and the on-disk record store.
//!
//! Every trial draws from its own seeded stream, so records do not depend on
//! the worker count. Shards hold pre-extracted 96x96 patches; a manifest
//! next to them lists counts, skips and checksums.

mod shard;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Family, Part, Pose};
use crate::physics::{
    sample_grasp, simulate_insertion, Displacement, Grasp, GraspNoise, GripperSpec, NoiseSpec, SimPart, TaskParams,
};
use crate::render::{self, extract_patch, make_masks, render_depth, Patch, RenderError};
use crate::rng;

pub use shard::{decode_shard, encode_shard, read_shard, write_shard, SHARD_MAGIC, SHARD_VERSION};

/// Records per shard file.
pub const SHARD_RECORDS: usize = 2048;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a shard: magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported shard version {0}")]
    BadVersion(u16),
    #[error("unknown record type {0}")]
    BadRecordType(u8),
    #[error("shard is {found} bytes, header implies {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("no parts of family {0:?}")]
    NoParts(Family),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum RecordType {
    GqGd = 1,
    Iqn = 2,
}

/// One simulated grasp attempt. Grasp and displacements are in world axes
/// relative to the part centre; `estimate`, `masks` exist on IQN records only.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub part_id: u32,
    pub trial: u32,
    pub task: Family,
    pub grasp: [f32; 4],
    pub patch: Vec<f32>,
    pub masks: Option<Vec<u8>>,
    pub lifted: bool,
    pub displacement: [f32; 4],
    pub estimate: Option<[f32; 4]>,
    pub eps: f32,
}

impl TrialRecord {
    fn check(&self, kind: RecordType) -> Result<(), DatasetError> {
        let iqn = kind == RecordType::Iqn;
        if self.patch.len() != render::PATCH_LEN
            || self.masks.as_ref().map(Vec::len) != iqn.then_some(2 * render::PATCH_LEN)
            || self.estimate.is_some() != iqn
        {
            return Err(DatasetError::Inconsistent(format!("record {}/{} does not match {kind:?}", self.part_id, self.trial)));
        }
        Ok(())
    }

    pub fn grasp_f64(&self) -> Grasp {
        let g = self.grasp.map(f64::from);
        Grasp { x: g[0], y: g[1], z: g[2], theta: g[3] }
    }

    pub fn displacement_f64(&self) -> Displacement {
        Displacement::from_array(self.displacement.map(f64::from))
    }

    pub fn estimate_f64(&self) -> Option<Displacement> {
        self.estimate.map(|e| Displacement::from_array(e.map(f64::from)))
    }
}

/// Sort key that makes shard bytes independent of collection order.
pub fn canonical_sort(records: &mut [TrialRecord]) {
    records.sort_by_key(|r| (r.part_id, r.trial));
}

/// Parts whose id hashes into the last tenth are held out for validation.
pub fn is_holdout(part_id: u32) -> bool {
    rng::mix64(part_id as u64 ^ 0x5EED_5917) % 10 == 0
}

/// Indices of training and held-out records.
pub fn split(records: &[TrialRecord]) -> (Vec<usize>, Vec<usize>) {
    (0..records.len()).partition(|&i| !is_holdout(records[i].part_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub seed: u64,
    pub trials: usize,
    pub workers: usize,
    pub gripper: GripperSpec,
    pub noise: NoiseSpec,
    /// Half-width of the square the part centre is placed in (mm).
    pub placement: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            seed: 0,
            trials: 20_000,
            workers: 1,
            gripper: GripperSpec::default(),
            noise: NoiseSpec::default(),
            placement: 15.0,
        }
    }
}

impl CollectConfig {
    fn sha256(&self, stage: &str, parts: &[Part]) -> String {
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        h.update(serde_json::to_vec(self).expect("config serialises"));
        for p in parts {
            h.update(p.id.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Uniform placement on the table, any orientation.
pub fn random_pose<R: rand::Rng + ?Sized>(rng: &mut R, placement: f64) -> Pose {
    let x = if placement > 0.0 { rng.random_range(-placement..placement) } else { 0.0 };
    let y = if placement > 0.0 { rng.random_range(-placement..placement) } else { 0.0 };
    Pose::planar(x, y, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

/// The grasp in world coordinates for a part placed at `pose`.
pub fn world_grasp(pose: &Pose, g: &Grasp) -> Grasp {
    Grasp { x: pose.x + g.x, y: pose.y + g.y, ..*g }
}

/// Depth (and optionally masks) of a placed part, then the patch at `g`.
pub fn observe(part: &Part, pose: &Pose, g: &Grasp, with_masks: bool) -> Result<Patch, RenderError> {
    let depth = render_depth(part, pose)?;
    let masks = with_masks.then(|| make_masks(part, pose, &depth));
    Ok(extract_patch(&depth, &world_grasp(pose, g), masks.as_ref()))
}

/// Predicts the world-axis displacement a grasp will cause.
pub trait DisplacementEstimator: Sync {
    fn estimate(&self, patch: &[f32], grasp: &Grasp) -> Displacement;
}

/// Assumes the part never moves.
pub struct NoDisplacement;

impl DisplacementEstimator for NoDisplacement {
    fn estimate(&self, _: &[f32], _: &Grasp) -> Displacement {
        Displacement::ZERO
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectStats {
    pub stage: String,
    pub seed: u64,
    pub requested: usize,
    pub recorded: usize,
    pub attempts: usize,
    pub sim_errors: usize,
    /// Trials dropped because the lift failed (IQN stage).
    pub aborted: usize,
    pub config_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Collected {
    pub kind: RecordType,
    pub records: Vec<TrialRecord>,
    pub stats: CollectStats,
}

struct Scene {
    part: usize,
    pose: Pose,
    grasp: Grasp,
    noise: GraspNoise,
}

fn draw(seed: u64, trial: usize, parts: &[Part], cfg: &CollectConfig) -> Scene {
    let mut r = rng::stream(seed, trial as u64);
    let part = r.random_range(0..parts.len());
    let pose = random_pose(&mut r, cfg.placement);
    let grasp = sample_grasp(&parts[part], &pose, &mut r);
    let noise = cfg.noise.sample(&mut r);
    Scene { part, pose, grasp, noise }
}

fn to_f32(a: [f64; 4]) -> [f32; 4] {
    a.map(|v| v as f32)
}

/// Grasp-quality / displacement records: every trial is kept, lifted or not.
pub fn collect_gq_gd(parts: &[Part], cfg: &CollectConfig) -> Result<Collected, DatasetError> {
    if parts.is_empty() {
        return Err(DatasetError::Inconsistent("no parts".into()));
    }
    let sims: Vec<SimPart> = parts.iter().map(SimPart::new).collect();
    let seed = rng::derive_named(cfg.seed, "gq");
    let results = crate::par::map_indexed(0..cfg.trials, cfg.workers, |i| -> Result<Option<TrialRecord>, RenderError> {
        let s = draw(seed, i, parts, cfg);
        let Ok(o) = sims[s.part].simulate(&s.pose, &s.grasp, &cfg.gripper, &s.noise) else {
            return Ok(None);
        };
        let patch = observe(&parts[s.part], &s.pose, &s.grasp, false)?;
        Ok(Some(TrialRecord {
            part_id: parts[s.part].id,
            trial: i as u32,
            task: parts[s.part].family,
            grasp: to_f32(s.grasp.to_array()),
            patch: patch.depth,
            masks: None,
            lifted: o.lifted,
            displacement: to_f32(o.displacement.to_array()),
            estimate: None,
            eps: 0.0,
        }))
    });
    let mut records = Vec::with_capacity(cfg.trials);
    let mut sim_errors = 0;
    for r in results {
        match r? {
            Some(rec) => records.push(rec),
            None => sim_errors += 1,
        }
    }
    canonical_sort(&mut records);
    let stats = CollectStats {
        stage: "gq".into(),
        seed: cfg.seed,
        requested: cfg.trials,
        recorded: records.len(),
        attempts: cfg.trials,
        sim_errors,
        aborted: 0,
        config_sha256: cfg.sha256("gq", parts),
    };
    Ok(Collected { kind: RecordType::GqGd, records, stats })
}

enum IqnOutcome {
    SimError,
    Dropped,
    Kept(Box<TrialRecord>),
}

/// Insertion records for one task: only lifted grasps are kept, each with
/// the estimator's displacement and the resulting insertion error.
pub fn collect_iqn(
    parts: &[Part],
    task: Family,
    cfg: &CollectConfig,
    estimator: &dyn DisplacementEstimator,
) -> Result<Collected, DatasetError> {
    let parts: Vec<Part> = parts.iter().filter(|p| p.family == task).cloned().collect();
    if parts.is_empty() {
        return Err(DatasetError::NoParts(task));
    }
    let sims: Vec<SimPart> = parts.iter().map(SimPart::new).collect();
    let tasks = parts.iter().map(TaskParams::for_part).collect::<Result<Vec<_>, _>>()?;
    let stage = format!("iqn-{}", task.name());
    let seed = rng::derive_named(cfg.seed, &stage);
    let max_attempts = cfg.trials.saturating_mul(200).max(1000);
    let batch = 64 * cfg.workers.max(1);

    let mut records = Vec::with_capacity(cfg.trials);
    let (mut attempts, mut sim_errors, mut aborted) = (0, 0, 0);
    'outer: while records.len() < cfg.trials && attempts < max_attempts {
        let lo = attempts;
        let hi = (lo + batch).min(max_attempts);
        let out = crate::par::map_indexed(lo..hi, cfg.workers, |i| -> Result<IqnOutcome, RenderError> {
            let s = draw(seed, i, &parts, cfg);
            let Ok(o) = sims[s.part].simulate(&s.pose, &s.grasp, &cfg.gripper, &s.noise) else {
                return Ok(IqnOutcome::SimError);
            };
            if !o.lifted {
                return Ok(IqnOutcome::Dropped);
            }
            let part = &parts[s.part];
            let patch = observe(part, &s.pose, &s.grasp, true)?;
            let est = estimator.estimate(&patch.depth, &s.grasp);
            let eps = simulate_insertion(part, &s.pose, &s.grasp, &o, &est, &tasks[s.part], &cfg.gripper);
            let masks = patch.masks.map(|[c, n]| [c, n].concat());
            Ok(IqnOutcome::Kept(Box::new(TrialRecord {
                part_id: part.id,
                trial: i as u32,
                task,
                grasp: to_f32(s.grasp.to_array()),
                patch: patch.depth,
                masks,
                lifted: true,
                displacement: to_f32(o.displacement.to_array()),
                estimate: Some(to_f32(est.to_array())),
                eps: eps as f32,
            })))
        });
        for r in out {
            attempts += 1;
            match r? {
                IqnOutcome::SimError => sim_errors += 1,
                IqnOutcome::Dropped => aborted += 1,
                IqnOutcome::Kept(rec) => {
                    records.push(*rec);
                    if records.len() == cfg.trials {
                        break 'outer;
                    }
                }
            }
        }
    }
    canonical_sort(&mut records);
    let stats = CollectStats {
        stage: stage.clone(),
        seed: cfg.seed,
        requested: cfg.trials,
        recorded: records.len(),
        attempts,
        sim_errors,
        aborted,
        config_sha256: cfg.sha256(&stage, &parts),
    };
    Ok(Collected { kind: RecordType::Iqn, records, stats })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub stats: CollectStats,
    pub kind: RecordType,
    /// `(file name, sha256, records)` per shard.
    pub shards: Vec<(String, String, usize)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let s = &self.stats;
        let mut out = format!(
            "stage {}\nrecord_type {}\nseed {}\nrequested {}\nrecorded {}\nattempts {}\nsim_errors {}\naborted {}\nconfig_sha256 {}\n",
            s.stage, self.kind as u8, s.seed, s.requested, s.recorded, s.attempts, s.sim_errors, s.aborted, s.config_sha256
        );
        for (name, sha, n) in &self.shards {
            out.push_str(&format!("shard {name} {sha} {n}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Manifest, DatasetError> {
        let bad = |m: &str| DatasetError::Manifest(m.to_string());
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        let mut shards = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(' ').ok_or_else(|| bad(line))?;
            if k == "shard" {
                let f: Vec<&str> = v.split(' ').collect();
                if f.len() != 3 {
                    return Err(bad(line));
                }
                shards.push((f[0].to_string(), f[1].to_string(), f[2].parse().map_err(|_| bad(line))?));
            } else {
                kv.insert(k, v);
            }
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
        let num = |k: &str| -> Result<usize, DatasetError> { get(k)?.parse().map_err(|_| bad(k)) };
        let kind = match num("record_type")? {
            1 => RecordType::GqGd,
            2 => RecordType::Iqn,
            t => return Err(DatasetError::BadRecordType(t as u8)),
        };
        Ok(Manifest {
            stats: CollectStats {
                stage: get("stage")?.to_string(),
                seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
                requested: num("requested")?,
                recorded: num("recorded")?,
                attempts: num("attempts")?,
                sim_errors: num("sim_errors")?,
                aborted: num("aborted")?,
                config_sha256: get("config_sha256")?.to_string(),
            },
            kind,
            shards,
        })
    }
}

pub fn manifest_path(dir: &Path, stage: &str) -> PathBuf {
    dir.join(format!("{stage}.manifest"))
}

/// Writes `{stage}-NNNN.grsp` shards plus `{stage}.manifest` into `dir`.
pub fn write_collection(dir: &Path, c: &Collected) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(dir)?;
    let mut shards = Vec::new();
    let chunks: Vec<&[TrialRecord]> =
        if c.records.is_empty() { vec![&[]] } else { c.records.chunks(SHARD_RECORDS).collect() };
    for (k, chunk) in chunks.into_iter().enumerate() {
        let name = format!("{}-{k:04}.grsp", c.stats.stage);
        let bytes = write_shard(&dir.join(&name), c.kind, chunk)?;
        shards.push((name, sha256_hex(&bytes), chunk.len()));
    }
    let m = Manifest { stats: c.stats.clone(), kind: c.kind, shards };
    std::fs::write(manifest_path(dir, &c.stats.stage), m.to_text())?;
    Ok(m)
}

/// Reads every shard a manifest lists, verifying checksums and counts.
pub fn read_collection(dir: &Path, stage: &str) -> Result<Collected, DatasetError> {
    let m = Manifest::parse(&std::fs::read_to_string(manifest_path(dir, stage))?)?;
    let mut records = Vec::with_capacity(m.stats.recorded);
    for (name, sha, n) in &m.shards {
        let bytes = std::fs::read(dir.join(name))?;
        if &sha256_hex(&bytes) != sha {
            return Err(DatasetError::Manifest(format!("checksum mismatch for {name}")));
        }
        let (kind, recs) = decode_shard(&bytes)?;
        if kind != m.kind || recs.len() != *n {
            return Err(DatasetError::Manifest(format!("{name} does not match its manifest entry")));
        }
        records.extend(recs);
    }
    if records.len() != m.stats.recorded {
        return Err(DatasetError::Manifest("record count mismatch".into()));
    }
    Ok(Collected { kind: m.kind, records, stats: m.stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partgen::{generate, GenConfig};

    fn parts() -> Vec<Part> {
        Family::ALL
            .iter()
            .flat_map(|&f| (0..3).map(move |i| generate(&GenConfig::for_index(5, f, i)).unwrap()))
            .collect()
    }

    #[test]
    fn shard_round_trip() {
        let cfg = CollectConfig { seed: 3, trials: 12, ..CollectConfig::default() };
        let c = collect_gq_gd(&parts(), &cfg).unwrap();
        let bytes = encode_shard(c.kind, &c.records).unwrap();
        assert_eq!(bytes.len(), 11 + 12 * RecordType::GqGd.stride());
        let (kind, back) = decode_shard(&bytes).unwrap();
        assert_eq!(kind, RecordType::GqGd);
        assert_eq!(back, c.records);
    }

    #[test]
    fn header_errors_are_distinct() {
        let good = encode_shard(RecordType::GqGd, &[]).unwrap();
        let mut m = good.clone();
        m[0] = b'X';
        assert!(matches!(decode_shard(&m), Err(DatasetError::BadMagic(_))));
        let mut v = good.clone();
        v[4] = 9;
        assert!(matches!(decode_shard(&v), Err(DatasetError::BadVersion(9))));
        let mut t = good.clone();
        t[6] = 7;
        assert!(matches!(decode_shard(&t), Err(DatasetError::BadRecordType(7))));
        let mut c = good;
        c[7] = 1;
        assert!(matches!(decode_shard(&c), Err(DatasetError::Truncated { .. })));
    }

    #[test]
    fn workers_do_not_change_records() {
        let p = parts();
        let one = collect_gq_gd(&p, &CollectConfig { seed: 8, trials: 30, ..CollectConfig::default() }).unwrap();
        let three =
            collect_gq_gd(&p, &CollectConfig { seed: 8, trials: 30, workers: 3, ..CollectConfig::default() }).unwrap();
        assert_eq!(one.records, three.records);
    }

    #[test]
    fn iqn_keeps_only_lifts() {
        let cfg = CollectConfig { seed: 4, trials: 10, ..CollectConfig::default() };
        let c = collect_iqn(&parts(), Family::Gear, &cfg, &NoDisplacement).unwrap();
        assert_eq!(c.records.len(), 10);
        assert!(c.records.iter().all(|r| r.lifted && r.task == Family::Gear));
        assert!(c.records.iter().all(|r| (0..=6).any(|k| r.eps == -(k as f32))));
        assert_eq!(c.stats.attempts, 10 + c.stats.aborted + c.stats.sim_errors);
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = Manifest {
            stats: CollectStats {
                stage: "gq".into(),
                seed: 1,
                requested: 5,
                recorded: 4,
                attempts: 5,
                sim_errors: 1,
                aborted: 0,
                config_sha256: "ab".into(),
            },
            kind: RecordType::GqGd,
            shards: vec![("gq-0000.grsp".into(), "cd".into(), 4)],
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }
}
