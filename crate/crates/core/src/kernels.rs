//! Slice-level forward and backward kernels.
//!
//! Everything here works on flat row-major buffers plus explicit shapes and
//! has no knowledge of the tape. The tape in [`crate::autodiff`] owns shape
//! validation and calls into these.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::scalar::Scalar;
use crate::tensor::strides;

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: (1, 1), padding: (0, 0), dilation: (1, 1), groups: 1 }
    }
}

impl Conv2dSpec {
    pub fn padded(padding: (usize, usize)) -> Self {
        Conv2dSpec { padding, ..Default::default() }
    }

    pub fn grouped(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn dilated(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }
}

/// Output extent of a sliding window, or `None` if the window does not fit.
pub fn window_out(len: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || padded < span {
        None
    } else {
        Some((padded - span) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: Conv2dSpec,
}

impl ConvDims {
    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }
    fn patch(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Scalar>(d: &ConvDims, x: &[T], b: usize, g: usize, cols: &mut [T]) {
    let p = d.positions();
    let (sh, sw) = d.spec.stride;
    let (ph, pw) = d.spec.padding;
    let (dh, dw) = d.spec.dilation;
    let plane = d.h * d.w;
    for cl in 0..d.cin_g() {
        let c = g * d.cin_g() + cl;
        let xc = &x[(b * d.cin + c) * plane..][..plane];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (cl * d.kh + ki) * d.kw + kj;
                let out = &mut cols[row * p..][..p];
                for oh in 0..d.ho {
                    let ih = (oh * sh + ki * dh) as isize - ph as isize;
                    let dst = &mut out[oh * d.wo..][..d.wo];
                    if ih < 0 || ih as usize >= d.h {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * d.w..][..d.w];
                    for (ow, v) in dst.iter_mut().enumerate() {
                        let iw = (ow * sw + kj * dw) as isize - pw as isize;
                        *v = if iw < 0 || iw as usize >= d.w { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(d: &ConvDims, cols: &[T], b: usize, g: usize, dx: &mut [T]) {
    let p = d.positions();
    let (sh, sw) = d.spec.stride;
    let (ph, pw) = d.spec.padding;
    let (dh, dw) = d.spec.dilation;
    let plane = d.h * d.w;
    for cl in 0..d.cin_g() {
        let c = g * d.cin_g() + cl;
        let xc = &mut dx[(b * d.cin + c) * plane..][..plane];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (cl * d.kh + ki) * d.kw + kj;
                let src = &cols[row * p..][..p];
                for oh in 0..d.ho {
                    let ih = (oh * sh + ki * dh) as isize - ph as isize;
                    if ih < 0 || ih as usize >= d.h {
                        continue;
                    }
                    let dst = &mut xc[ih as usize * d.w..][..d.w];
                    for ow in 0..d.wo {
                        let iw = (ow * sw + kj * dw) as isize - pw as isize;
                        if iw >= 0 && (iw as usize) < d.w {
                            dst[iw as usize] = dst[iw as usize] + src[oh * d.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(d: &ConvDims, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let p = d.positions();
    let k = d.patch();
    let cout_g = d.cout_g();
    let mut out = vec![T::zero(); d.batch * d.cout * p];
    let mut cols = vec![T::zero(); k * p];
    for b in 0..d.batch {
        for g in 0..d.spec.groups {
            im2col(d, x, b, g, &mut cols);
            let wg = &w[g * cout_g * k..][..cout_g * k];
            let og = &mut out[(b * d.cout + g * cout_g) * p..][..cout_g * p];
            T::gemm(cout_g, k, p, T::one(), wg, (k, 1), &cols, (p, 1), T::zero(), og, (p, 1));
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                out[(b * d.cout + co) * p..][..p].iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    d: &ConvDims,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let p = d.positions();
    let k = d.patch();
    let cout_g = d.cout_g();
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); w.len()]);
    let db = need.2.then(|| {
        let mut db = vec![T::zero(); d.cout];
        for b in 0..d.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc = *acc + dy[(b * d.cout + co) * p..][..p].iter().copied().sum::<T>();
            }
        }
        db
    });
    if dx.is_some() || dw.is_some() {
        let mut cols = vec![T::zero(); k * p];
        for b in 0..d.batch {
            for g in 0..d.spec.groups {
                let dyg = &dy[(b * d.cout + g * cout_g) * p..][..cout_g * p];
                if let Some(dw) = dw.as_mut() {
                    im2col(d, x, b, g, &mut cols);
                    let dwg = &mut dw[g * cout_g * k..][..cout_g * k];
                    T::gemm(cout_g, p, k, T::one(), dyg, (p, 1), &cols, (1, p), T::one(), dwg, (k, 1));
                }
                if let Some(dx) = dx.as_mut() {
                    let wg = &w[g * cout_g * k..][..cout_g * k];
                    T::gemm(k, cout_g, p, T::one(), wg, (1, k), dyg, (p, 1), T::zero(), &mut cols, (p, 1));
                    col2im_add(d, &cols, b, g, dx);
                }
            }
        }
    }
    ConvGrads { input: dx, weight: dw, bias: db }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolDims {
    pub outer: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub ho: usize,
    pub wo: usize,
    pub include_pad: bool,
}

impl PoolDims {
    /// Visits every in-bounds input offset of the window of output `(oh, ow)`.
    fn window(&self, oh: usize, ow: usize) -> (core::ops::Range<usize>, core::ops::Range<usize>, usize) {
        let h0 = (oh * self.stride.0) as isize - self.padding.0 as isize;
        let w0 = (ow * self.stride.1) as isize - self.padding.1 as isize;
        let h1 = (h0 + self.kernel.0 as isize).min(self.h as isize);
        let w1 = (w0 + self.kernel.1 as isize).min(self.w as isize);
        let (h0, w0) = (h0.max(0) as usize, w0.max(0) as usize);
        let (h1, w1) = (h1.max(0) as usize, w1.max(0) as usize);
        let count = if self.include_pad {
            self.kernel.0 * self.kernel.1
        } else {
            (h1.saturating_sub(h0) * w1.saturating_sub(w0)).max(1)
        };
        (h0..h1, w0..w1, count)
    }
}

pub(crate) fn avg_pool_forward<T: Scalar>(d: &PoolDims, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); d.outer * d.ho * d.wo];
    for o in 0..d.outer {
        let xp = &x[o * d.h * d.w..][..d.h * d.w];
        for oh in 0..d.ho {
            for ow in 0..d.wo {
                let (hr, wr, count) = d.window(oh, ow);
                let mut acc = T::zero();
                for ih in hr {
                    for iw in wr.clone() {
                        acc = acc + xp[ih * d.w + iw];
                    }
                }
                out[(o * d.ho + oh) * d.wo + ow] = acc / T::from_usize_lossy(count);
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward<T: Scalar>(d: &PoolDims, dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); d.outer * d.h * d.w];
    for o in 0..d.outer {
        let dxp = &mut dx[o * d.h * d.w..][..d.h * d.w];
        for oh in 0..d.ho {
            for ow in 0..d.wo {
                let (hr, wr, count) = d.window(oh, ow);
                let g = dy[(o * d.ho + oh) * d.wo + ow] / T::from_usize_lossy(count);
                for ih in hr {
                    for iw in wr.clone() {
                        dxp[ih * d.w + iw] = dxp[ih * d.w + iw] + g;
                    }
                }
            }
        }
    }
    dx
}

/// `y[n, o] = Σ_i x[n, i]·w[o, i] + b[o]`.
pub(crate) fn linear_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, rows: usize, din: usize, dout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * dout];
    T::gemm(rows, din, dout, T::one(), x, (din, 1), w, (1, din), T::zero(), &mut y, (dout, 1));
    if let Some(b) = bias {
        for row in y.chunks_mut(dout) {
            row.iter_mut().zip(b).for_each(|(v, &bv)| *v = *v + bv);
        }
    }
    y
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    rows: usize,
    din: usize,
    dout: usize,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let input = need.0.then(|| {
        let mut dx = vec![T::zero(); rows * din];
        T::gemm(rows, dout, din, T::one(), dy, (dout, 1), w, (din, 1), T::zero(), &mut dx, (din, 1));
        dx
    });
    let weight = need.1.then(|| {
        let mut dw = vec![T::zero(); dout * din];
        T::gemm(dout, rows, din, T::one(), dy, (1, dout), x, (din, 1), T::zero(), &mut dw, (din, 1));
        dw
    });
    let bias = need.2.then(|| {
        let mut db = vec![T::zero(); dout];
        for row in dy.chunks(dout) {
            db.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
        }
        db
    });
    ConvGrads { input, weight, bias }
}

/// Batched `c = a·b` (or `a·bᵀ` when `trans_b`), `a: [batch, m, k]`.
pub(crate) fn bmm_forward<T: Scalar>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize, trans_b: bool) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    let bs = if trans_b { (1, k) } else { (n, 1) };
    for i in 0..batch {
        T::gemm(m, k, n, T::one(), &a[i * m * k..][..m * k], (k, 1), &b[i * k * n..][..k * n], bs, T::zero(), &mut c[i * m * n..][..m * n], (n, 1));
    }
    c
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bmm_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    dc: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
    need: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let da = need.0.then(|| {
        let mut da = vec![T::zero(); batch * m * k];
        // da = dc · bᵀ, with b stored as k×n (or n×k when transposed)
        let bs = if trans_b { (k, 1) } else { (1, n) };
        for i in 0..batch {
            T::gemm(m, n, k, T::one(), &dc[i * m * n..][..m * n], (n, 1), &b[i * k * n..][..k * n], bs, T::zero(), &mut da[i * m * k..][..m * k], (k, 1));
        }
        da
    });
    let db = need.1.then(|| {
        let mut db = vec![T::zero(); batch * k * n];
        for i in 0..batch {
            let ai = &a[i * m * k..][..m * k];
            let dci = &dc[i * m * n..][..m * n];
            let dbi = &mut db[i * k * n..][..k * n];
            if trans_b {
                // db (n×k) = dcᵀ · a
                T::gemm(n, m, k, T::one(), dci, (1, n), ai, (k, 1), T::zero(), dbi, (k, 1));
            } else {
                // db (k×n) = aᵀ · dc
                T::gemm(k, m, n, T::one(), ai, (1, k), dci, (n, 1), T::zero(), dbi, (n, 1));
            }
        }
        db
    });
    (da, db)
}

/// Indices of the `keep` largest entries of `row`, ties resolved toward the
/// lowest index.
pub fn topk_indices<T: Scalar>(row: &[T], keep: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(keep);
    idx
}

/// Softmax over the last axis restricted to each row's `keep` largest
/// entries; discarded entries are exactly zero.
pub(crate) fn masked_softmax_forward<T: Scalar>(x: &[T], width: usize, keep: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let mut kept = vec![false; width];
    for (row, orow) in x.chunks(width).zip(out.chunks_mut(width)) {
        if keep >= width {
            kept.iter_mut().for_each(|k| *k = true);
        } else {
            kept.iter_mut().for_each(|k| *k = false);
            for i in topk_indices(row, keep) {
                kept[i] = true;
            }
        }
        let max = row
            .iter()
            .zip(&kept)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for ((o, &v), &k) in orow.iter_mut().zip(row).zip(&kept) {
            if k {
                *o = (v - max).exp();
                sum = sum + *o;
            }
        }
        orow.iter_mut().for_each(|o| *o = *o / sum);
    }
    out
}

/// Softmax Jacobian-vector product; masked entries have zero output so they
/// receive zero gradient.
pub(crate) fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], width: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, dyr), dxr) in y.chunks(width).zip(dy.chunks(width)).zip(dx.chunks_mut(width)) {
        let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - dot);
        }
    }
    dx
}

pub(crate) struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel mean and biased variance of `[batch, channels, inner]`.
pub(crate) fn bn_batch_stats<T: Scalar>(x: &[T], batch: usize, channels: usize, inner: usize) -> BnStats<T> {
    let n = T::from_usize_lossy(batch * inner);
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        let mut s = T::zero();
        for b in 0..batch {
            s = s + x[(b * channels + c) * inner..][..inner].iter().copied().sum::<T>();
        }
        let m = s / n;
        let mut v = T::zero();
        for b in 0..batch {
            for &xv in &x[(b * channels + c) * inner..][..inner] {
                v = v + (xv - m) * (xv - m);
            }
        }
        mean[c] = m;
        var[c] = v / n;
    }
    BnStats { mean, var }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_apply<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
    batch: usize,
    channels: usize,
    inner: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * inner;
            let (g, bt, m, is) = (gamma[c], beta[c], mean[c], inv_std[c]);
            for (o, &xv) in y[off..off + inner].iter_mut().zip(&x[off..off + inner]) {
                *o = g * (xv - m) * is + bt;
            }
        }
    }
    y
}

pub(crate) struct BnGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    batch: usize,
    channels: usize,
    inner: usize,
    batch_stats: bool,
) -> BnGrads<T> {
    let n = T::from_usize_lossy(batch * inner);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for c in 0..channels {
        let (m, is) = (mean[c], inv_std[c]);
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..batch {
            let off = (b * channels + c) * inner;
            for (&xv, &g) in x[off..off + inner].iter().zip(&dy[off..off + inner]) {
                sum_dy = sum_dy + g;
                sum_dy_xhat = sum_dy_xhat + g * (xv - m) * is;
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        for b in 0..batch {
            let off = (b * channels + c) * inner;
            for i in off..off + inner {
                dx[i] = if batch_stats {
                    let xhat = (x[i] - m) * is;
                    gamma[c] * is / n * (n * dy[i] - sum_dy - xhat * sum_dy_xhat)
                } else {
                    gamma[c] * is * dy[i]
                };
            }
        }
    }
    BnGrads { input: dx, gamma: dgamma, beta: dbeta }
}

/// Gathers `x` (shape `shape`) into the axis order `perm`.
pub(crate) fn permute<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(x[off]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
