//! The shared convolutional scorer: four 3x3 conv layers over a
//! down-sampled patch, a small pose branch, one hidden dense layer and a head.

use std::io::{Read, Write};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::{mean_pool, col2im, gemm, im2col, maxpool, maxpool_backward, Real};
use super::NetError;
use crate::physics::{Displacement, Grasp};
use crate::render::{PATCH_LEN, PATCH_SIZE};

/// Default side of the network input, a block-mean down-sample of the patch.
pub const INPUT_SIZE: usize = PATCH_SIZE / 2;
/// Depth normaliser (mm).
pub const DEPTH_SCALE: f64 = 50.0;
/// Grasp position normaliser (mm).
pub const POSE_SCALE: f64 = 50.0;
/// Per-component displacement normaliser; the rotation term is thereby
/// weighted 50x relative to millimetres.
pub const DISPLACEMENT_SCALE: [f64; 4] = [10.0, 10.0, 10.0, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Gqn,
    Gdn,
    Iqn,
}

impl Variant {
    pub fn tag(self) -> u8 {
        match self {
            Variant::Gqn => 1,
            Variant::Gdn => 2,
            Variant::Iqn => 3,
        }
    }

    pub fn from_tag(t: u8) -> Option<Variant> {
        [Variant::Gqn, Variant::Gdn, Variant::Iqn].into_iter().find(|v| v.tag() == t)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gqn => "gqn",
            Variant::Gdn => "gdn",
            Variant::Iqn => "iqn",
        }
    }

    pub fn channels(self) -> usize {
        if self == Variant::Iqn { 3 } else { 1 }
    }

    pub fn pose_dim(self) -> usize {
        if self == Variant::Iqn { 7 } else { 3 }
    }

    pub fn outputs(self) -> usize {
        if self == Variant::Gdn { 4 } else { 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    /// Side of the square input; a multiple of 8.
    pub input: usize,
    pub channels: usize,
    pub pose_dim: usize,
    pub filters: [usize; 4],
    pub pose_units: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Arch {
    pub fn new(variant: Variant, filters: [usize; 4], pose_units: usize, hidden: usize) -> Arch {
        Arch {
            input: INPUT_SIZE,
            channels: variant.channels(),
            pose_dim: variant.pose_dim(),
            filters,
            pose_units,
            hidden,
            outputs: variant.outputs(),
        }
    }

    pub fn standard(variant: Variant) -> Arch {
        Arch::new(variant, [8, 16, 16, 32], 32, 128)
    }

    /// Two filters per layer on an 8x8 input; for gradient checks.
    pub fn tiny(variant: Variant) -> Arch {
        Arch { input: 8, ..Arch::new(variant, [2, 2, 2, 2], 4, 6) }
    }

    /// Feature-map side at conv layer `l`.
    pub fn side(&self, l: usize) -> usize {
        self.input >> l
    }

    pub fn input_len(&self) -> usize {
        self.input * self.input
    }

    pub fn flat(&self) -> usize {
        self.filters[3] * self.side(3) * self.side(3)
    }

    fn conv_in(&self, l: usize) -> usize {
        if l == 0 { self.channels } else { self.filters[l - 1] }
    }

    /// `(name, shape)` of every parameter tensor in declaration order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        let mut t = Vec::new();
        for l in 0..4 {
            t.push((format!("conv{}.w", l + 1), vec![self.filters[l], self.conv_in(l), 3, 3]));
            t.push((format!("conv{}.b", l + 1), vec![self.filters[l]]));
        }
        t.push(("pose.w".into(), vec![self.pose_units, self.pose_dim]));
        t.push(("pose.b".into(), vec![self.pose_units]));
        t.push(("dense.w".into(), vec![self.hidden, self.flat() + self.pose_units]));
        t.push(("dense.b".into(), vec![self.hidden]));
        t.push(("head.w".into(), vec![self.outputs, self.hidden]));
        t.push(("head.b".into(), vec![self.outputs]));
        t
    }

    /// Start offset of each tensor, plus the total as the last entry.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = vec![0];
        for (_, shape) in self.tensors() {
            out.push(out.last().unwrap() + shape.iter().product::<usize>());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        *self.offsets().last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scorer<T: Real = f32> {
    pub variant: Variant,
    pub arch: Arch,
    pub params: Vec<T>,
    offsets: Vec<usize>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct Workspace<T: Real> {
    batch: usize,
    x0: Vec<T>,
    cols: [Vec<T>; 4],
    act: [Vec<T>; 4],
    pooled: [Vec<T>; 3],
    arg: [Vec<u32>; 3],
    poses: Vec<T>,
    pose_act: Vec<T>,
    z: Vec<T>,
    hidden: Vec<T>,
    out: Vec<T>,
    scratch: Vec<T>,
    scratch2: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new() -> Self {
        Workspace::default()
    }

    /// Network outputs of the last forward pass, `[batch][outputs]`.
    pub fn output(&self) -> &[T] {
        &self.out
    }

    /// Flattened conv features of the last forward pass, `[batch][flat + pose_units]`.
    pub fn features(&self) -> &[T] {
        &self.z
    }
}

fn resize<T: Real>(v: &mut Vec<T>, n: usize) {
    v.clear();
    v.resize(n, T::zero());
}

impl<T: Real> Scorer<T> {
    pub fn zeros(variant: Variant, arch: Arch) -> Result<Self, NetError> {
        if arch.input == 0 || arch.input % 8 != 0 {
            return Err(NetError::Dimension(format!("input side {} is not a positive multiple of 8", arch.input)));
        }
        if arch.channels != variant.channels() || arch.pose_dim != variant.pose_dim() || arch.outputs != variant.outputs() {
            return Err(NetError::Dimension(format!("{arch:?} does not fit {variant:?}")));
        }
        let offsets = arch.offsets();
        Ok(Scorer { variant, arch, params: vec![T::zero(); *offsets.last().unwrap()], offsets })
    }

    /// He-normal weights, zero biases.
    pub fn init(variant: Variant, arch: Arch, seed: u64) -> Result<Self, NetError> {
        let mut s = Scorer::zeros(variant, arch)?;
        let mut rng = crate::rng::stream(seed, 0x1417);
        let tensors = arch.tensors();
        for (k, (name, shape)) in tensors.iter().enumerate() {
            if name.ends_with(".b") {
                continue;
            }
            let fan_in: usize = shape[1..].iter().product();
            let gain = if name.starts_with("head") { 1.0 } else { 2.0 };
            let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            let range = s.offsets[k]..s.offsets[k + 1];
            for p in &mut s.params[range] {
                *p = T::from_f64(dist.sample(&mut rng));
            }
        }
        Ok(s)
    }

    pub fn tensor(&self, k: usize) -> &[T] {
        &self.params[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn tensor_mut(&mut self, k: usize) -> &mut [T] {
        let r = self.offsets[k]..self.offsets[k + 1];
        &mut self.params[r]
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.arch.tensors().iter().position(|(n, _)| n == name)
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn convert<U: Real>(&self) -> Scorer<U> {
        Scorer {
            variant: self.variant,
            arch: self.arch,
            params: self.params.iter().map(|p| U::from_f64(p.to_f64().expect("finite"))).collect(),
            offsets: self.offsets.clone(),
        }
    }

    /// Copies the four conv layers from `other` (same filter counts).
    pub fn copy_conv_from(&mut self, other: &Scorer<T>) -> Result<(), NetError> {
        if self.arch.filters != other.arch.filters || self.arch.channels != other.arch.channels {
            return Err(NetError::Dimension("conv stacks differ".into()));
        }
        for k in 0..8 {
            self.tensor_mut(k).copy_from_slice(other.tensor(k));
        }
        Ok(())
    }

    /// Raw outputs (logits for classifier heads) for `batch` samples.
    /// `images`: `[batch][channels][input][input]`, `poses`: `[batch][pose_dim]`.
    pub fn forward(&self, ws: &mut Workspace<T>, images: &[T], poses: &[T], batch: usize) -> Result<(), NetError> {
        let a = &self.arch;
        let c = a.channels;
        let il = a.input_len();
        if images.len() != batch * c * il || poses.len() != batch * a.pose_dim {
            return Err(NetError::Dimension(format!(
                "expected {} image and {} pose values, got {} and {}",
                batch * c * il,
                batch * a.pose_dim,
                images.len(),
                poses.len()
            )));
        }
        ws.batch = batch;
        resize(&mut ws.x0, c * batch * il);
        for b in 0..batch {
            for ch in 0..c {
                ws.x0[(ch * batch + b) * il..][..il].copy_from_slice(&images[(b * c + ch) * il..][..il]);
            }
        }
        for l in 0..4 {
            let cin = a.conv_in(l);
            let s = a.side(l);
            let n = batch * s * s;
            let f = a.filters[l];
            resize(&mut ws.cols[l], 9 * cin * n);
            {
                let x = if l == 0 { &ws.x0 } else { &ws.pooled[l - 1] };
                im2col(x, cin, batch, s, &mut ws.cols[l]);
            }
            resize(&mut ws.act[l], f * n);
            gemm(f, 9 * cin, n, self.tensor(2 * l), false, &ws.cols[l], false, false, &mut ws.act[l]);
            let bias = self.tensor(2 * l + 1);
            for (row, &bv) in ws.act[l].chunks_exact_mut(n).zip(bias) {
                for v in row {
                    *v = (*v + bv).max(T::zero());
                }
            }
            if l < 3 {
                let h = s / 2;
                resize(&mut ws.pooled[l], f * batch * h * h);
                ws.arg[l].clear();
                ws.arg[l].resize(f * batch * h * h, 0);
                maxpool(&ws.act[l], f * batch, s, &mut ws.pooled[l], &mut ws.arg[l]);
            }
        }
        let flat = a.flat();
        let zdim = flat + a.pose_units;
        let per = a.side(3) * a.side(3);
        resize(&mut ws.z, batch * zdim);
        for f in 0..a.filters[3] {
            for b in 0..batch {
                ws.z[b * zdim + f * per..][..per].copy_from_slice(&ws.act[3][(f * batch + b) * per..][..per]);
            }
        }
        ws.poses.clear();
        ws.poses.extend_from_slice(poses);
        resize(&mut ws.pose_act, batch * a.pose_units);
        gemm(batch, a.pose_dim, a.pose_units, poses, false, self.tensor(8), true, false, &mut ws.pose_act);
        for row in ws.pose_act.chunks_exact_mut(a.pose_units) {
            for (v, &bv) in row.iter_mut().zip(self.tensor(9)) {
                *v = (*v + bv).max(T::zero());
            }
        }
        for b in 0..batch {
            ws.z[b * zdim + flat..][..a.pose_units].copy_from_slice(&ws.pose_act[b * a.pose_units..][..a.pose_units]);
        }
        resize(&mut ws.hidden, batch * a.hidden);
        gemm(batch, zdim, a.hidden, &ws.z, false, self.tensor(10), true, false, &mut ws.hidden);
        for row in ws.hidden.chunks_exact_mut(a.hidden) {
            for (v, &bv) in row.iter_mut().zip(self.tensor(11)) {
                *v = (*v + bv).max(T::zero());
            }
        }
        resize(&mut ws.out, batch * a.outputs);
        gemm(batch, a.hidden, a.outputs, &ws.hidden, false, self.tensor(12), true, false, &mut ws.out);
        for row in ws.out.chunks_exact_mut(a.outputs) {
            for (v, &bv) in row.iter_mut().zip(self.tensor(13)) {
                *v = *v + bv;
            }
        }
        Ok(())
    }

    /// Gradient of the loss w.r.t. every parameter given `d_out`
    /// (`[batch][outputs]`) for the last forward pass; overwrites `grads`.
    pub fn backward(&self, ws: &mut Workspace<T>, d_out: &[T], grads: &mut [T]) {
        let a = &self.arch;
        let batch = ws.batch;
        assert_eq!(d_out.len(), batch * a.outputs);
        assert_eq!(grads.len(), self.params.len());
        let o = &self.offsets;
        let flat = a.flat();
        let zdim = flat + a.pose_units;
        let sum_rows = |m: &[T], cols: usize, dst: &mut [T]| {
            dst.fill(T::zero());
            for row in m.chunks_exact(cols) {
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
        };

        // head
        gemm(a.outputs, batch, a.hidden, d_out, true, &ws.hidden, false, false, &mut grads[o[12]..o[13]]);
        sum_rows(d_out, a.outputs, &mut grads[o[13]..o[14]]);
        let mut d_hidden = std::mem::take(&mut ws.scratch);
        resize(&mut d_hidden, batch * a.hidden);
        gemm(batch, a.outputs, a.hidden, d_out, false, self.tensor(12), false, false, &mut d_hidden);
        for (d, &h) in d_hidden.iter_mut().zip(&ws.hidden) {
            if h <= T::zero() {
                *d = T::zero();
            }
        }
        // dense
        gemm(a.hidden, batch, zdim, &d_hidden, true, &ws.z, false, false, &mut grads[o[10]..o[11]]);
        let mut d_sum = vec![T::zero(); a.hidden];
        sum_rows(&d_hidden, a.hidden, &mut d_sum);
        grads[o[11]..o[12]].copy_from_slice(&d_sum);
        let mut dz = std::mem::take(&mut ws.scratch2);
        resize(&mut dz, batch * zdim);
        gemm(batch, a.hidden, zdim, &d_hidden, false, self.tensor(10), false, false, &mut dz);
        ws.scratch = d_hidden;
        // pose branch
        let mut d_pose = vec![T::zero(); batch * a.pose_units];
        for b in 0..batch {
            for j in 0..a.pose_units {
                if ws.pose_act[b * a.pose_units + j] > T::zero() {
                    d_pose[b * a.pose_units + j] = dz[b * zdim + flat + j];
                }
            }
        }
        gemm(a.pose_units, batch, a.pose_dim, &d_pose, true, &ws.poses, false, false, &mut grads[o[8]..o[9]]);
        sum_rows(&d_pose, a.pose_units, &mut grads[o[9]..o[10]]);
        // conv stack, top down
        let per = a.side(3) * a.side(3);
        let mut d_act = vec![T::zero(); a.filters[3] * batch * per];
        for f in 0..a.filters[3] {
            for b in 0..batch {
                d_act[(f * batch + b) * per..][..per].copy_from_slice(&dz[b * zdim + f * per..][..per]);
            }
        }
        ws.scratch2 = dz;
        for l in (0..4).rev() {
            let cin = a.conv_in(l);
            let s = a.side(l);
            let n = batch * s * s;
            let f = a.filters[l];
            for (d, &v) in d_act.iter_mut().zip(&ws.act[l]) {
                if v <= T::zero() {
                    *d = T::zero();
                }
            }
            gemm(f, n, 9 * cin, &d_act, false, &ws.cols[l], true, false, &mut grads[o[2 * l]..o[2 * l + 1]]);
            let db = &mut grads[o[2 * l + 1]..o[2 * l + 2]];
            for (dbv, row) in db.iter_mut().zip(d_act.chunks_exact(n)) {
                *dbv = row.iter().copied().sum();
            }
            if l == 0 {
                break;
            }
            let mut d_cols = vec![T::zero(); 9 * cin * n];
            gemm(9 * cin, f, n, self.tensor(2 * l), true, &d_act, false, false, &mut d_cols);
            let mut d_pooled = vec![T::zero(); cin * n];
            col2im(&d_cols, cin, batch, s, &mut d_pooled);
            let prev = a.side(l - 1);
            d_act = vec![T::zero(); cin * batch * prev * prev];
            maxpool_backward(&d_pooled, &ws.arg[l - 1], &mut d_act);
        }
    }
}

/// Normalised network input for one patch at `side` x `side`: depth minus
/// its mean over `DEPTH_SCALE`, then the contact and no-go masks if given.
pub fn prepare_image<T: Real>(patch: &[f32], masks: Option<&[u8]>, side: usize, out: &mut [T]) {
    assert_eq!(patch.len(), PATCH_LEN);
    assert_eq!(PATCH_SIZE % side, 0, "input side must divide the patch");
    let k = PATCH_SIZE / side;
    let len = side * side;
    let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / PATCH_LEN as f64;
    let norm: Vec<T> = patch.iter().map(|&v| T::from_f64((v as f64 - mean) / DEPTH_SCALE)).collect();
    mean_pool(&norm, PATCH_SIZE, k, &mut out[..len]);
    if let Some(m) = masks {
        assert_eq!(m.len(), 2 * PATCH_LEN);
        for c in 0..2 {
            let plane: Vec<T> = m[c * PATCH_LEN..][..PATCH_LEN].iter().map(|&v| T::from_f64(v as f64)).collect();
            mean_pool(&plane, PATCH_SIZE, k, &mut out[(c + 1) * len..][..len]);
        }
    }
}

/// Pose-branch input: grasp offset from the part centre in the grasp's own
/// axes, its height, and for IQN the displacement estimate in the same axes.
pub fn pose_vector<T: Real>(grasp: &Grasp, estimate: Option<&Displacement>, out: &mut [T]) {
    let (s, c) = grasp.theta.sin_cos();
    out[0] = T::from_f64((c * grasp.x + s * grasp.y) / POSE_SCALE);
    out[1] = T::from_f64((-s * grasp.x + c * grasp.y) / POSE_SCALE);
    out[2] = T::from_f64(grasp.z / POSE_SCALE);
    if let Some(e) = estimate {
        let local = e.to_frame(grasp.theta).to_array();
        for k in 0..4 {
            out[3 + k] = T::from_f64(local[k] / DISPLACEMENT_SCALE[k]);
        }
    }
}

/// Displacement target in network units: grasp axes, scaled.
pub fn displacement_target(d: &Displacement, grasp_theta: f64) -> [f64; 4] {
    let local = d.to_frame(grasp_theta).to_array();
    std::array::from_fn(|k| local[k] / DISPLACEMENT_SCALE[k])
}

/// Inverse of `displacement_target`: world-axis displacement.
pub fn displacement_from_output(out: &[f64], grasp_theta: f64) -> Displacement {
    let local = Displacement::new(
        out[0] * DISPLACEMENT_SCALE[0],
        out[1] * DISPLACEMENT_SCALE[1],
        out[2] * DISPLACEMENT_SCALE[2],
        out[3] * DISPLACEMENT_SCALE[3],
    );
    local.from_frame(grasp_theta)
}

pub const WEIGHTS_MAGIC: [u8; 4] = *b"GWTS";
pub const WEIGHTS_VERSION: u16 = 1;

impl Scorer<f32> {
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), NetError> {
        let a = &self.arch;
        w.write_all(&WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&[self.variant.tag()])?;
        let dims = [a.input, a.channels, a.pose_dim, a.filters[0], a.filters[1], a.filters[2], a.filters[3], a.pose_units, a.hidden, a.outputs, self.params.len()];
        for d in dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * self.params.len());
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory");
        v
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NetError> {
        let mut head = [0u8; 7];
        r.read_exact(&mut head)?;
        if head[..4] != WEIGHTS_MAGIC {
            return Err(NetError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != WEIGHTS_VERSION {
            return Err(NetError::Format(format!("unsupported version {version}")));
        }
        let variant = Variant::from_tag(head[6]).ok_or_else(|| NetError::Format(format!("unknown variant {}", head[6])))?;
        let mut dims = [0usize; 11];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let arch = Arch {
            input: dims[0],
            channels: dims[1],
            pose_dim: dims[2],
            filters: [dims[3], dims[4], dims[5], dims[6]],
            pose_units: dims[7],
            hidden: dims[8],
            outputs: dims[9],
        };
        let mut s = Scorer::zeros(variant, arch)?;
        if dims[10] != s.params.len() {
            return Err(NetError::Format(format!("{} parameters for a {} parameter layout", dims[10], s.params.len())));
        }
        let mut buf = vec![0u8; 4 * dims[10]];
        r.read_exact(&mut buf)?;
        for (p, c) in s.params.iter_mut().zip(buf.chunks_exact(4)) {
            *p = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        Ok(s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NetError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NetError> {
        Scorer::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
