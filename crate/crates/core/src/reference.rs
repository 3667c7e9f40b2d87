//! Direct loop implementations used as oracles for the optimized kernels.
//!
//! Everything here is `f64`, row-major and written for clarity over speed.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::PoolSpec;
use crate::kernels::Conv2dSpec;

/// Convolution of `x: [b, cin, h, w]` with `weight: [cout, cin/groups, kh, kw]`.
/// Returns the output and its shape.
pub fn conv2d(
    x: &[f64],
    xs: [usize; 4],
    weight: &[f64],
    ws: [usize; 4],
    bias: Option<&[f64]>,
    spec: Conv2dSpec,
) -> (Vec<f64>, [usize; 4]) {
    let [b, cin, h, w] = xs;
    let [cout, cpg, kh, kw] = ws;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let ho = (h + 2 * ph - dh * (kh - 1) - 1) / sh + 1;
    let wo = (w + 2 * pw - dw * (kw - 1) - 1) / sw + 1;
    let opg = cout / spec.groups;
    let mut out = vec![0.0; b * cout * ho * wo];
    for n in 0..b {
        for o in 0..cout {
            let g = o / opg;
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias.map_or(0.0, |bv| bv[o]);
                    for c in 0..cpg {
                        let ci = g * cpg + c;
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * sh + u * dh) as isize - ph as isize;
                                let s = (j * sw + v * dw) as isize - pw as isize;
                                if r < 0 || s < 0 || r as usize >= h || s as usize >= w {
                                    continue;
                                }
                                acc += x[((n * cin + ci) * h + r as usize) * w + s as usize]
                                    * weight[((o * cpg + c) * kh + u) * kw + v];
                            }
                        }
                    }
                    out[((n * cout + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    (out, [b, cout, ho, wo])
}

/// Average pooling of the two trailing axes of `x: [b, c, h, w]`.
pub fn avg_pool(x: &[f64], xs: [usize; 4], spec: PoolSpec) -> (Vec<f64>, [usize; 4]) {
    let [b, c, h, w] = xs;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; b * c * ho * wo];
    for plane in 0..b * c {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = 0.0;
                let mut inside = 0usize;
                for u in 0..kh {
                    for v in 0..kw {
                        let r = (i * sh + u) as isize - ph as isize;
                        let s = (j * sw + v) as isize - pw as isize;
                        if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < w {
                            acc += x[(plane * h + r as usize) * w + s as usize];
                            inside += 1;
                        }
                    }
                }
                let div = if spec.include_pad { kh * kw } else { inside.max(1) };
                out[(plane * ho + i) * wo + j] = acc / div as f64;
            }
        }
    }
    (out, [b, c, ho, wo])
}

/// `y = x · weightᵀ + bias` for `x: [rows, din]`, `weight: [dout, din]`.
pub fn linear(x: &[f64], rows: usize, din: usize, weight: &[f64], dout: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            let mut acc = bias.map_or(0.0, |bv| bv[o]);
            for i in 0..din {
                acc += x[r * din + i] * weight[o * din + i];
            }
            out[r * dout + o] = acc;
        }
    }
    out
}

/// Row-wise softmax.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&v| Float::exp(v - max)).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Dense multi-head attention with bias-free square projections.
///
/// `x` supplies queries and `y` keys and values, both `[b, u, t]` with the
/// `t` time steps as tokens. Projections follow `linear` (weights `[u, u]`).
/// Returns `[b, u, t]`.
#[allow(clippy::too_many_arguments)]
pub fn dense_attention(
    x: &[f64],
    y: &[f64],
    b: usize,
    u: usize,
    t: usize,
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    heads: usize,
) -> Vec<f64> {
    let dk = u / heads;
    let scale = 1.0 / Float::sqrt(dk as f64);
    let mut out = vec![0.0; b * u * t];
    let project = |src: &[f64], w: &[f64], n: usize| -> Vec<f64> {
        // tokens [t, u]
        let mut tok = vec![0.0; t * u];
        for s in 0..t {
            for o in 0..u {
                let mut acc = 0.0;
                for i in 0..u {
                    acc += src[(n * u + i) * t + s] * w[o * u + i];
                }
                tok[s * u + o] = acc;
            }
        }
        tok
    };
    for n in 0..b {
        let q = project(x, wq, n);
        let k = project(y, wk, n);
        let v = project(y, wv, n);
        for h in 0..heads {
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| (0..dk).map(|d| q[i * u + h * dk + d] * k[j * u + h * dk + d]).sum::<f64>() * scale)
                    .collect();
                let p = softmax(&scores);
                for d in 0..dk {
                    out[(n * u + h * dk + d) * t + i] = (0..t).map(|j| p[j] * v[j * u + h * dk + d]).sum();
                }
            }
        }
    }
    out
}
