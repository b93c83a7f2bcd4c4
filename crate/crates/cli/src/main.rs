use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use taskgrasp::dataset::{collect_gq_gd, collect_iqn, read_collection, write_collection, CollectConfig};
use taskgrasp::eval::{emit_figures, run_eval, EvalConfig};
use taskgrasp::nets::{train_gdn, train_gqn, train_iqn, GdnEstimator, Scorer, TrainConfig, TrainReport, Variant};
use taskgrasp::pipeline::{load_part, load_parts, read_training_ids, run_pipeline, write_family, write_training_ids, PipelineConfig};
use taskgrasp::planner::{plan_ablation, Mode, NetSet, PlannerConfig};
use taskgrasp::{Family, Pose};

#[derive(Parser)]
#[command(name = "taskgrasp", version, about = "Task-oriented grasp planning: data, training, planning and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate parts of one family.
    Gen(GenArgs),
    /// Simulate grasp trials and write dataset shards.
    Collect(CollectArgs),
    /// Train one scorer.
    Train(TrainArgs),
    /// Plan a grasp for one part.
    Plan(PlanArgs),
    /// Evaluate planner ablations on held-out parts.
    Eval(EvalArgs),
    /// Run gen, collect, train and eval end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    family: Family,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Gq,
    Iqn,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long, value_enum)]
    stage: Stage,
    /// Required for the iqn stage.
    #[arg(long)]
    task: Option<Family>,
    #[arg(long)]
    parts: PathBuf,
    /// Trials (gq) or lifted records (iqn).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// GDN weights used for the displacement estimate (iqn stage).
    #[arg(long)]
    gdn: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetKind {
    Gqn,
    Gdn,
    Iqn,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    net: NetKind,
    /// Required for iqn.
    #[arg(long)]
    task: Option<Family>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// GQN whose conv filters seed the GDN.
    #[arg(long)]
    gqn: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_curriculum: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    part: PathBuf,
    #[arg(long)]
    task: Option<Family>,
    #[arg(long)]
    nets: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "full")]
    mode: Mode,
    /// Placement of the part as `x,y,theta` (mm, mm, rad).
    #[arg(long, default_value = "0,0,0")]
    pose: String,
    #[arg(long, default_value_t = 1000)]
    candidates: usize,
    #[arg(long, default_value_t = 100)]
    survivors: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    parts: PathBuf,
    #[arg(long)]
    nets: PathBuf,
    /// `all` or a comma list of gqn_only, gqn_gdn, full.
    #[arg(long, default_value = "all")]
    modes: String,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Training seeds, comma separated.
    #[arg(long, default_value = "1,2,3")]
    training_seeds: String,
    #[arg(long, default_value_t = 200)]
    train_parts: usize,
    #[arg(long, default_value_t = 100)]
    eval_parts: usize,
    #[arg(long, default_value_t = 20_000)]
    gq_trials: usize,
    #[arg(long, default_value_t = 8_000)]
    iqn_trials: usize,
    #[arg(long, default_value_t = 200)]
    eval_trials: usize,
    #[arg(long)]
    no_compare: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Collect(a) => collect(a),
        Command::Train(a) => train(a),
        Command::Plan(a) => plan(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let parts = write_family(&a.out, a.seed, a.family, a.count).context("generating parts")?;
    eprintln!("wrote {} {} parts to {}", parts.len(), a.family, a.out.display());
    Ok(())
}

fn collect(a: CollectArgs) -> Result<()> {
    let parts = load_parts(&a.parts).with_context(|| format!("reading parts from {}", a.parts.display()))?;
    let cfg = CollectConfig { seed: a.seed, trials: a.n, workers: a.workers, ..CollectConfig::default() };
    let c = match a.stage {
        Stage::Gq => collect_gq_gd(&parts, &cfg)?,
        Stage::Iqn => {
            let task = a.task.context("--task is required for the iqn stage")?;
            let path = a.gdn.context("--gdn is required for the iqn stage")?;
            let gdn = Scorer::load(&path).with_context(|| format!("loading {}", path.display()))?;
            if gdn.variant != Variant::Gdn {
                bail!("{} holds a {} network, not a gdn", path.display(), gdn.variant.name());
            }
            collect_iqn(&parts, task, &cfg, &GdnEstimator { scorer: gdn })?
        }
    };
    let m = write_collection(&a.out, &c)?;
    eprintln!(
        "{}: {} records in {} shards ({} attempts, {} simulator errors)",
        c.stats.stage,
        c.stats.recorded,
        m.shards.len(),
        c.stats.attempts,
        c.stats.sim_errors
    );
    Ok(())
}

fn summarize(name: &str, rep: &TrainReport) {
    if let Some(v) = rep.final_val() {
        eprintln!(
            "{name}: {} epochs, {} train / {} held out, loss {:.4}{}{}{}",
            rep.epochs.len(),
            rep.train_size,
            rep.val_size,
            v.loss,
            v.auc.map(|x| format!(", auc {x:.3}")).unwrap_or_default(),
            v.accuracy.map(|x| format!(", accuracy {x:.3}")).unwrap_or_default(),
            v.rmse.map(|x| format!(", rmse {x:.3}")).unwrap_or_default(),
        );
    }
}

fn record_training_ids(out: &Path, records: &[taskgrasp::dataset::TrialRecord]) -> Result<()> {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut ids = read_training_ids(dir)?;
    ids.extend(records.iter().map(|r| r.part_id));
    write_training_ids(dir, &ids)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig { seed: a.seed, ..TrainConfig::default() };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (scorer, report, records) = match a.net {
        NetKind::Gqn | NetKind::Gdn => {
            let data = read_collection(&a.data, "gq")?;
            let (s, r) = if let NetKind::Gqn = a.net {
                train_gqn(&data.records, &cfg)?
            } else {
                let path = a.gqn.as_ref().context("--gqn is required to train a gdn")?;
                let gqn = Scorer::load(path).with_context(|| format!("loading {}", path.display()))?;
                train_gdn(&data.records, &gqn, &cfg)?
            };
            (s, r, data.records)
        }
        NetKind::Iqn => {
            let task = a.task.context("--task is required to train an iqn")?;
            let data = read_collection(&a.data, &format!("iqn-{task}"))?;
            let (s, r) = train_iqn(&data.records, task, !a.no_curriculum, &cfg)?;
            (s, r, data.records)
        }
    };
    summarize(scorer.variant.name(), &report);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    scorer.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    record_training_ids(&a.out, &records)?;
    Ok(())
}

fn parse_pose(s: &str) -> Result<Pose> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().context("--pose must be x,y,theta")?;
    let [x, y, theta] = v[..] else { bail!("--pose must be x,y,theta") };
    Ok(Pose::planar(x, y, theta))
}

fn plan(a: PlanArgs) -> Result<()> {
    let part = load_part(&a.part)?;
    if let Some(t) = a.task {
        if t != part.family {
            bail!("{} is a {} part, not a {t}", a.part.display(), part.family);
        }
    }
    let nets = NetSet::load(&a.nets)?;
    let cfg = PlannerConfig { candidates: a.candidates, survivors: a.survivors, ..PlannerConfig::default() };
    let r = plan_ablation(&part, &parse_pose(&a.pose)?, &nets, &cfg, a.seed, a.mode)?;
    if a.json {
        println!("{}", serde_json::to_string(&r)?);
    } else {
        let g = r.grasp;
        println!("grasp x {:.3} y {:.3} z {:.3} theta {:.4}", g.x, g.y, g.z, g.theta);
        let d = r.displacement_estimate;
        println!("estimated displacement {:.3} {:.3} {:.3} {:.4}", d.dx, d.dy, d.dz, d.dtheta);
        println!("q_g {:.4} q_i {}", r.q_g, r.q_i.map_or("-".into(), |q| format!("{q:.4}")));
        println!("{} survivors of {} candidates{}", r.survivor_count, r.candidate_count, if r.fallback { " (below threshold)" } else { "" });
    }
    Ok(())
}

fn parse_modes(s: &str) -> Result<Vec<Mode>> {
    if s == "all" {
        return Ok(Mode::ALL.to_vec());
    }
    s.split(',').map(|m| m.trim().parse::<Mode>().map_err(anyhow::Error::msg)).collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let parts = load_parts(&a.parts)?;
    let nets = NetSet::load(&a.nets)?;
    let training_ids: BTreeSet<u32> = read_training_ids(&a.nets)?;
    let mut tasks: Vec<Family> = Family::ALL.into_iter().filter(|t| parts.iter().any(|p| p.family == *t)).collect();
    let modes = parse_modes(&a.modes)?;
    if modes.contains(&Mode::Full) {
        tasks.retain(|t| nets.iqn(*t).is_some());
    }
    if tasks.is_empty() {
        bail!("no task has both parts and the networks it needs");
    }
    let cfg = EvalConfig { seed: a.seed, trials: a.n, modes, tasks, workers: a.workers, ..EvalConfig::default() };
    let report = run_eval(&parts, &training_ids, &nets, &cfg)?;
    emit_figures(&report, &[], &a.out)?;
    for m in &report.metrics {
        eprintln!(
            "{:<8} {:<8} lift {:.3}  rmse {:.3} mm / {:.4} rad  insertion {:.3} ± {:.3}",
            m.task, m.mode, m.lift_rate, m.rmse_translation, m.rmse_rotation, m.insertion_mean, m.insertion_std
        );
    }
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let training_seeds = a.training_seeds.split(',').map(|s| s.trim().parse::<u64>()).collect::<Result<Vec<_>, _>>().context("--training-seeds")?;
    let cfg = PipelineConfig {
        seed: a.seed,
        train_parts: a.train_parts,
        eval_parts: a.eval_parts,
        gq_trials: a.gq_trials,
        iqn_trials: a.iqn_trials,
        eval_trials: a.eval_trials,
        training_seeds,
        compare_curriculum: !a.no_compare,
        workers: a.workers,
        ..PipelineConfig::default()
    };
    let out = run_pipeline(&cfg, &a.out, &mut |l| eprintln!("{l}"))?;
    eprintln!("done in {:.1}s; ablation medians in {}", out.timings.total, a.out.join("ablation.csv").display());
    Ok(())
}
