//! Dense kernels shared by the scorers. Feature maps are stored
//! channel-major across the batch (`[C][B][H][W]`) so one GEMM covers a
//! whole mini-batch.

use num_traits::Float;

pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static {
    /// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(m: usize, k: usize, n: usize, a: &[Self], rsa: isize, csa: isize, b: &[Self], rsb: isize, csb: isize, beta: Self, c: &mut [Self], rsc: isize, csc: isize);
    fn from_f64(v: f64) -> Self;
    fn to_f32(self) -> f32;
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

macro_rules! real_impl {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm_raw(m: usize, k: usize, n: usize, a: &[$t], rsa: isize, csa: isize, b: &[$t], rsb: isize, csb: isize, beta: $t, c: &mut [$t], rsc: isize, csc: isize) {
                assert!(a.len() >= span(m, k, rsa, csa));
                assert!(b.len() >= span(k, n, rsb, csb));
                assert!(c.len() >= span(m, n, rsc, csc));
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above keep every strided access in bounds.
                unsafe { $gemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc) }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn to_f32(self) -> f32 {
                self as f32
            }
        }
    };
}

real_impl!(f32, matrixmultiply::sgemm);
real_impl!(f64, matrixmultiply::dgemm);

/// Row-major `c[m][n] (+)= op(a) * op(b)`; `ta`/`tb` read `a`/`b` transposed
/// (`a` is then stored `[k][m]`, `b` stored `[n][k]`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, accumulate: bool, c: &mut [T]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// 3x3, zero padding 1. `x`: `[c][b][s][s]` into `cols`: `[c*9][b*s*s]`.
pub fn im2col<T: Real>(x: &[T], c: usize, b: usize, s: usize, cols: &mut [T]) {
    let n = b * s * s;
    debug_assert_eq!(x.len(), c * n);
    debug_assert_eq!(cols.len(), 9 * c * n);
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ch * 9) + ky * 3 + kx) * n..][..n];
                for bi in 0..b {
                    let src = &x[(ch * b + bi) * s * s..][..s * s];
                    let dst = &mut row[bi * s * s..][..s * s];
                    for y in 0..s {
                        let sy = y as isize + ky as isize - 1;
                        let drow = &mut dst[y * s..][..s];
                        if sy < 0 || sy >= s as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let srow = &src[sy as usize * s..][..s];
                        match kx {
                            0 => {
                                drow[0] = T::zero();
                                drow[1..].copy_from_slice(&srow[..s - 1]);
                            }
                            1 => drow.copy_from_slice(srow),
                            _ => {
                                drow[..s - 1].copy_from_slice(&srow[1..]);
                                drow[s - 1] = T::zero();
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatters `cols` back into `dx` (overwritten).
pub fn col2im<T: Real>(cols: &[T], c: usize, b: usize, s: usize, dx: &mut [T]) {
    let n = b * s * s;
    dx.fill(T::zero());
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ch * 9) + ky * 3 + kx) * n..][..n];
                for bi in 0..b {
                    let src = &row[bi * s * s..][..s * s];
                    let dst = &mut dx[(ch * b + bi) * s * s..][..s * s];
                    for y in 0..s {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= s as isize {
                            continue;
                        }
                        let srow = &src[y * s..][..s];
                        let drow = &mut dst[sy as usize * s..][..s];
                        match kx {
                            0 => {
                                for i in 1..s {
                                    drow[i - 1] = drow[i - 1] + srow[i];
                                }
                            }
                            1 => {
                                for i in 0..s {
                                    drow[i] = drow[i] + srow[i];
                                }
                            }
                            _ => {
                                for i in 0..s - 1 {
                                    drow[i + 1] = drow[i + 1] + srow[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pool over `planes` square planes of side `s`; records the flat
/// input index of each winner (first maximum in row-major order).
pub fn maxpool<T: Real>(x: &[T], planes: usize, s: usize, y: &mut [T], arg: &mut [u32]) {
    let h = s / 2;
    for p in 0..planes {
        let src = &x[p * s * s..][..s * s];
        for oy in 0..h {
            for ox in 0..h {
                let base = 2 * oy * s + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + s, base + s + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = p * h * h + oy * h + ox;
                y[o] = src[best];
                arg[o] = (p * s * s + best) as u32;
            }
        }
    }
}

pub fn maxpool_backward<T: Real>(dy: &[T], arg: &[u32], dx: &mut [T]) {
    dx.fill(T::zero());
    for (g, &i) in dy.iter().zip(arg) {
        dx[i as usize] = dx[i as usize] + *g;
    }
}

/// `k x k` block mean of one `s x s` plane into `out` (`s/k x s/k`).
pub fn mean_pool<T: Real>(x: &[T], s: usize, k: usize, out: &mut [T]) {
    let h = s / k;
    let w = T::from_f64(1.0 / (k * k) as f64);
    for oy in 0..h {
        for ox in 0..h {
            let mut acc = T::zero();
            for dy in 0..k {
                for &v in &x[(oy * k + dy) * s + ox * k..][..k] {
                    acc = acc + v;
                }
            }
            out[oy * h + ox] = acc * w;
        }
    }
}
