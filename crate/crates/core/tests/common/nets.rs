//! Oracles for the scorers: a loop-by-loop forward pass that shares no code
//! with the GEMM path, and central finite differences of the batch loss.

use rand::Rng;
use taskgrasp::nets::{bce_with_logits, squared_error, Arch, Scorer, Variant, Workspace};
use taskgrasp::rng;

pub struct Batch {
    pub images: Vec<f64>,
    pub poses: Vec<f64>,
    pub targets: Vec<f64>,
    pub n: usize,
}

/// Continuous random inputs, so max-pool ties have probability zero.
pub fn random_batch(arch: &Arch, variant: Variant, n: usize, seed: u64) -> Batch {
    let mut r = rng::stream(seed, 77);
    let images = (0..n * arch.channels * arch.input_len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let poses = (0..n * arch.pose_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let targets = (0..n * arch.outputs)
        .map(|i| if variant == Variant::Gdn { r.random_range(-1.0..1.0) } else { (i % 2) as f64 })
        .collect();
    Batch { images, poses, targets, n }
}

fn tensor<'a>(s: &'a Scorer<f64>, name: &str) -> &'a [f64] {
    s.tensor(s.tensor_index(name).expect("tensor exists"))
}

fn conv(x: &[Vec<Vec<f64>>], w: &[f64], b: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let cin = x.len();
    let s = x[0].len();
    let mut out = vec![vec![vec![0.0; s]; s]; b.len()];
    for (f, plane) in out.iter_mut().enumerate() {
        for y in 0..s {
            for xx in 0..s {
                let mut acc = b[f];
                for c in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if sy < 0 || sx < 0 || sy >= s as isize || sx >= s as isize {
                                continue;
                            }
                            acc += w[((f * cin + c) * 3 + ky) * 3 + kx] * x[c][sy as usize][sx as usize];
                        }
                    }
                }
                plane[y][xx] = acc.max(0.0);
            }
        }
    }
    out
}

fn pool(x: Vec<Vec<Vec<f64>>>) -> Vec<Vec<Vec<f64>>> {
    x.iter()
        .map(|p| {
            let h = p.len() / 2;
            (0..h)
                .map(|y| (0..h).map(|xx| p[2 * y][2 * xx].max(p[2 * y][2 * xx + 1]).max(p[2 * y + 1][2 * xx]).max(p[2 * y + 1][2 * xx + 1])).collect())
                .collect()
        })
        .collect()
}

fn dense(x: &[f64], w: &[f64], b: &[f64], relu: bool) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(j, &bj)| {
            let v = bj + x.iter().enumerate().map(|(i, &xi)| w[j * x.len() + i] * xi).sum::<f64>();
            if relu { v.max(0.0) } else { v }
        })
        .collect()
}

/// Raw outputs for one sample.
pub fn reference_forward(s: &Scorer<f64>, image: &[f64], pose: &[f64]) -> Vec<f64> {
    let a = s.arch;
    let side = a.input;
    let mut x: Vec<Vec<Vec<f64>>> = (0..a.channels)
        .map(|c| (0..side).map(|y| image[(c * side + y) * side..][..side].to_vec()).collect())
        .collect();
    for l in 1..=4 {
        x = conv(&x, tensor(s, &format!("conv{l}.w")), tensor(s, &format!("conv{l}.b")));
        if l < 4 {
            x = pool(x);
        }
    }
    let mut z: Vec<f64> = x.iter().flat_map(|p| p.iter().flatten().copied()).collect();
    z.extend(dense(pose, tensor(s, "pose.w"), tensor(s, "pose.b"), true));
    let h = dense(&z, tensor(s, "dense.w"), tensor(s, "dense.b"), true);
    dense(&h, tensor(s, "head.w"), tensor(s, "head.b"), false)
}

/// Mean batch loss and its gradient with respect to the outputs.
fn loss(s: &Scorer<f64>, ws: &mut Workspace<f64>, b: &Batch) -> (f64, Vec<f64>) {
    s.forward(ws, &b.images, &b.poses, b.n).expect("shapes agree");
    let mut d = vec![0.0; b.targets.len()];
    let l = if s.variant == Variant::Gdn {
        squared_error(ws.output(), &b.targets, b.n, &mut d)
    } else {
        bce_with_logits(ws.output(), &b.targets, &mut d)
    };
    (l, d)
}

pub struct GradCheck {
    pub checked: usize,
    pub failed: Vec<(usize, f64, f64)>,
    pub worst: f64,
}

/// Compares backprop with central differences at step `h` for every
/// parameter; a parameter passes when the two agree within `rel` of the
/// larger magnitude (exact zeros on both sides pass).
pub fn grad_check(s: &Scorer<f64>, b: &Batch, h: f64, rel: f64) -> GradCheck {
    let mut ws = Workspace::new();
    let (_, d) = loss(s, &mut ws, b);
    let mut analytic = vec![0.0; s.params.len()];
    s.backward(&mut ws, &d, &mut analytic);
    let mut probe = s.clone();
    let mut out = GradCheck { checked: 0, failed: Vec::new(), worst: 0.0 };
    for i in 0..s.params.len() {
        let p = s.params[i];
        probe.params[i] = p + h;
        let up = loss(&probe, &mut ws, b).0;
        probe.params[i] = p - h;
        let down = loss(&probe, &mut ws, b).0;
        probe.params[i] = p;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        let err = if scale == 0.0 { 0.0 } else { (analytic[i] - numeric).abs() / scale.max(1e-8) };
        out.worst = out.worst.max(err);
        out.checked += 1;
        if err > rel {
            out.failed.push((i, analytic[i], numeric));
        }
    }
    out
}

/// Scorer and batch seeds of the reduced gradient check. A central
/// difference at h = 1e-3 is only valid when no ReLU input or max-pool
/// pair sits within the step of switching; with these seeds none does.
pub const FD_SEEDS: (u64, u64) = (2, 10);

/// The reduced scorer the acceptance gradient check runs on. Biases get
/// small random values: with all-zero biases a unit whose inputs are all
/// cut by ReLU sits exactly on its kink.
pub fn reduced(variant: Variant, seed: u64) -> Scorer<f64> {
    let mut s = Scorer::init(variant, Arch::tiny(variant), seed).expect("tiny arch is valid");
    let mut r = rng::stream(seed, 78);
    for (k, (name, _)) in s.arch.tensors().iter().enumerate() {
        if name.ends_with(".b") {
            for b in s.tensor_mut(k) {
                *b = r.random_range(-0.1..0.1);
            }
        }
    }
    s
}
