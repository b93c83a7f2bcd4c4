use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use taskgrasp::nets::{Workspace, INPUT_SIZE};
use taskgrasp::physics::GripperSpec;
use taskgrasp::planner::{plan, PlannerConfig};
use taskgrasp::render::{extract_patch, render_depth};
use taskgrasp::dataset::world_grasp;
use taskgrasp::{Scorer, TrainConfig, Variant};
use taskgrasp_bench::{nets, scenes};

fn simulate(c: &mut Criterion) {
    let sc = scenes(64, 1);
    let g = GripperSpec::default();
    let mut group = c.benchmark_group("simulate_grasp");
    group.throughput(Throughput::Elements(sc.len() as u64));
    group.bench_function("64 scenes", |b| {
        b.iter(|| {
            for s in &sc {
                black_box(s.sim.simulate(&s.pose, &s.grasp, &g, &s.noise).ok());
            }
        })
    });
    group.finish();
}

fn render(c: &mut Criterion) {
    let sc = scenes(3, 2);
    c.bench_function("render_depth", |b| b.iter(|| black_box(render_depth(&sc[1].part, &sc[1].pose).unwrap())));
    let depth = render_depth(&sc[0].part, &sc[0].pose).unwrap();
    let wg = world_grasp(&sc[0].pose, &sc[0].grasp);
    c.bench_function("extract_patch", |b| b.iter(|| black_box(extract_patch(&depth, &wg, None))));
}

fn scorer(c: &mut Criterion) {
    let batch = 64;
    for (v, input) in [(Variant::Gqn, TrainConfig::default().input), (Variant::Iqn, TrainConfig::default().input), (Variant::Gqn, INPUT_SIZE)] {
        let cfg = TrainConfig { input, ..TrainConfig::default() };
        let s = Scorer::<f32>::init(v, cfg.arch(v), 1).unwrap();
        let images = vec![0.1f32; batch * s.arch.channels * s.arch.input_len()];
        let poses = vec![0.1f32; batch * s.arch.pose_dim];
        let d = vec![0.01f32; batch * s.arch.outputs];
        let mut ws = Workspace::new();
        let mut grads = vec![0.0f32; s.params.len()];
        let mut group = c.benchmark_group(format!("{}_{}px", v.name(), input));
        group.throughput(Throughput::Elements(batch as u64));
        group.bench_function("forward", |b| b.iter(|| s.forward(&mut ws, &images, &poses, batch).unwrap()));
        group.bench_function("forward_backward", |b| {
            b.iter(|| {
                s.forward(&mut ws, &images, &poses, batch).unwrap();
                s.backward(&mut ws, &d, &mut grads);
            })
        });
        group.finish();
    }
}

fn planner(c: &mut Criterion) {
    let n = nets();
    let sc = scenes(3, 3);
    let cfg = PlannerConfig::default();
    let mut group = c.benchmark_group("plan");
    group.sample_size(10);
    for s in &sc {
        group.bench_function(s.part.family.name(), |b| {
            b.iter(|| black_box(plan(&s.part, &s.pose, &n, &cfg, 7).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, simulate, render, scorer, planner);
criterion_main!(benches);
