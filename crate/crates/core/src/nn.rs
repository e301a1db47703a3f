//! Dense building blocks with hand-written backward passes. Matrices are
//! row-major `f64` slices; weights are stored `in × out` so a linear layer is
//! `y = x·W + b`.

use crate::tensor::Tensor;

/// A strided matrix view into a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn rows(ld: usize) -> Self {
        View { off: 0, rs: ld, cs: 1 }
    }

    pub fn at(off: usize, rs: usize) -> Self {
        View { off, rs, cs: 1 }
    }

    /// The same storage read as its transpose.
    pub fn t(self) -> Self {
        View { off: self.off, rs: self.cs, cs: self.rs }
    }

    fn end(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return self.off;
        }
        self.off + (rows - 1) * self.rs + (cols - 1) * self.cs + 1
    }
}

/// `C = alpha·A·B + beta·C` with `A: m×k`, `B: k×n`, `C: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    assert!(av.end(m, k) <= a.len(), "gemm: A view out of bounds");
    assert!(bv.end(k, n) <= b.len(), "gemm: B view out of bounds");
    assert!(cv.end(m, n) <= c.len(), "gemm: C view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: all three views were bounds-checked above and `c` is a unique
    // borrow, so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.off),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.off),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.off),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// `a (m×k) · b (k×n)`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a, View::rows(k), b, View::rows(n), 0.0, &mut c, View::rows(n));
    c
}

/// `c (k×n) += aᵀ·b` for `a: m×k`, `b: m×n`.
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    gemm(k, m, n, 1.0, a, View::rows(k).t(), b, View::rows(n), 1.0, c, View::rows(n));
}

/// `a (m×n) · bᵀ` for `b: k×n`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    gemm(m, n, k, 1.0, a, View::rows(n), b, View::rows(n).t(), 0.0, &mut c, View::rows(k));
    c
}

pub(crate) fn add_bias(y: &mut [f64], b: &[f64]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, bi) in row.iter_mut().zip(b) {
            *v += bi;
        }
    }
}

pub(crate) fn col_sum_acc(dy: &[f64], cols: usize, out: &mut [f64]) {
    for row in dy.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Weight `in × out` and bias `out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(w: Tensor, b: Tensor) -> Self {
        Linear { w, b }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[fan_in, fan_out]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub(crate) fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = matmul(x, self.w.data(), rows, self.fan_in(), self.fan_out());
        add_bias(&mut y, self.b.data());
        y
    }

    /// Accumulates weight gradients into `grad` and returns `dx`.
    pub(crate) fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear) -> Vec<f64> {
        self.accumulate(x, dy, rows, grad);
        matmul_nt(dy, self.w.data(), rows, self.fan_out(), self.fan_in())
    }

    /// Weight gradients only, for layers whose input needs no gradient.
    pub(crate) fn accumulate(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear) {
        matmul_tn_acc(x, dy, rows, self.fan_in(), self.fan_out(), grad.w.data_mut());
        col_sum_acc(dy, self.fan_out(), grad.b.data_mut());
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
        }
    }

    pub(crate) fn forward(&self, x: &[f64]) -> (Vec<f64>, LnCache) {
        let d = self.gamma.len();
        let rows = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let (g, b) = (self.gamma.data(), self.beta.data());
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                y[r * d + c] = h * g[c] + b[c];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub(crate) fn backward(&self, cache: &LnCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
        let d = self.gamma.len();
        let g = self.gamma.data();
        let mut dx = vec![0.0; dy.len()];
        for (r, &is) in cache.inv_std.iter().enumerate() {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let dg = grad.gamma.data_mut();
            for c in 0..d {
                dg[c] += dyr[c] * xh[c];
            }
            let bgrad = grad.beta.data_mut();
            for c in 0..d {
                bgrad[c] += dyr[c];
            }
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for c in 0..d {
                let dxh = dyr[c] * g[c];
                m1 += dxh;
                m2 += dxh * xh[c];
            }
            m1 /= d as f64;
            m2 /= d as f64;
            for c in 0..d {
                dx[r * d + c] = is * (dyr[c] * g[c] - m1 - xh[c] * m2);
            }
        }
        dx
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `[sin(pos·ω_k)…, cos(pos·ω_k)…]` with `ω_k = 10000^(-k/(dim/2))`.
pub(crate) fn sinusoid(pos: f64, dim: usize, out: &mut [f64]) {
    let half = dim / 2;
    for k in 0..half {
        let w = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (pos * w).sin();
        out[half + k] = (pos * w).cos();
    }
}

/// Token rows attended jointly: group `g`, element `e` lives at row
/// `g·group_stride + e·elem_stride`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnLayout {
    pub groups: usize,
    pub len: usize,
    pub group_stride: usize,
    pub elem_stride: usize,
}

impl AttnLayout {
    fn row(&self, g: usize) -> usize {
        g * self.group_stride
    }
}

/// A column block of a row-major buffer with leading dimension `ld`.
#[derive(Clone, Copy)]
pub(crate) struct Cols<'a> {
    pub buf: &'a [f64],
    pub ld: usize,
    pub off: usize,
}

/// Multi-head softmax attention over every group of `layout`. Queries and
/// keys/values share the layout. Writes the concatenated head outputs into
/// `out` (rows × `heads·dh`) and returns the attention probabilities.
pub(crate) fn attend(
    q: Cols,
    k: Cols,
    v: Cols,
    layout: AttnLayout,
    heads: usize,
    dh: usize,
    out: &mut [f64],
) -> Vec<f64> {
    let d = heads * dh;
    let len = layout.len;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; layout.groups * heads * len * len];
    for g in 0..layout.groups {
        let r0 = layout.row(g);
        for h in 0..heads {
            let p = &mut probs[(g * heads + h) * len * len..][..len * len];
            let qv = View::at(r0 * q.ld + q.off + h * dh, layout.elem_stride * q.ld);
            let kv = View::at(r0 * k.ld + k.off + h * dh, layout.elem_stride * k.ld);
            gemm(len, dh, len, scale, q.buf, qv, k.buf, kv.t(), 0.0, p, View::rows(len));
            for row in p.chunks_exact_mut(len) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    s += *x;
                }
                for x in row.iter_mut() {
                    *x /= s;
                }
            }
            let vv = View::at(r0 * v.ld + v.off + h * dh, layout.elem_stride * v.ld);
            let ov = View::at(r0 * d + h * dh, layout.elem_stride * d);
            gemm(len, len, dh, 1.0, p, View::rows(len), v.buf, vv, 0.0, out, ov);
        }
    }
    probs
}

/// Mutable column block used for attention input gradients.
pub(crate) struct ColsMut<'a> {
    pub buf: &'a mut [f64],
    pub ld: usize,
    pub off: usize,
}

/// Backward of [`attend`]: accumulates into the q/k/v gradient blocks given
/// the upstream gradient `dout` of the concatenated head outputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_backward(
    q: Cols,
    k: Cols,
    v: Cols,
    probs: &[f64],
    dout: &[f64],
    layout: AttnLayout,
    heads: usize,
    dh: usize,
    dq: &mut ColsMut,
    dk: &mut ColsMut,
    dv: &mut ColsMut,
) {
    let d = heads * dh;
    let len = layout.len;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; len * len];
    for g in 0..layout.groups {
        let r0 = layout.row(g);
        let es = layout.elem_stride;
        for h in 0..heads {
            let p = &probs[(g * heads + h) * len * len..][..len * len];
            let dov = View::at(r0 * d + h * dh, es * d);
            let vv = View::at(r0 * v.ld + v.off + h * dh, es * v.ld);
            let qv = View::at(r0 * q.ld + q.off + h * dh, es * q.ld);
            let kv = View::at(r0 * k.ld + k.off + h * dh, es * k.ld);
            // dV += Pᵀ·dO
            let dvv = View::at(r0 * dv.ld + dv.off + h * dh, es * dv.ld);
            gemm(len, len, dh, 1.0, p, View::rows(len).t(), dout, dov, 1.0, dv.buf, dvv);
            // dP = dO·Vᵀ
            gemm(len, dh, len, 1.0, dout, dov, v.buf, vv.t(), 0.0, &mut dp, View::rows(len));
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the score scale.
            for (prow, dprow) in p.chunks_exact(len).zip(dp.chunks_exact_mut(len)) {
                let dot: f64 = prow.iter().zip(dprow.iter()).map(|(a, b)| a * b).sum();
                for (x, pv) in dprow.iter_mut().zip(prow) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            let dqv = View::at(r0 * dq.ld + dq.off + h * dh, es * dq.ld);
            gemm(len, len, dh, 1.0, &dp, View::rows(len), k.buf, kv, 1.0, dq.buf, dqv);
            let dkv = View::at(r0 * dk.ld + dk.off + h * dh, es * dk.ld);
            gemm(len, len, dh, 1.0, &dp, View::rows(len).t(), q.buf, qv, 1.0, dk.buf, dkv);
        }
    }
}
