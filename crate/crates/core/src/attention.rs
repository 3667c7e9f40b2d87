//! Multiscale sparse cross-attention.
//!
//! Tokens are the `T0` time steps of a `[B, U, T0]` feature map and each
//! token embeds the `U` feature channels. Keys and values come from the sum
//! of several length-preserving average pools of the second input; queries
//! come from the first. Sparse attention mixes two top-k softmax maps with
//! learnable weights `alpha` and `beta`; heads are concatenated without an
//! output projection.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{PoolSpec, Tape, Var};
use crate::error::{cfg_err, dim_err, Result};
use crate::param::{uniform_fan_in, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the two top-k hyperparameters translate into per-row keep counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopKMode {
    /// Keep `ceil(T0 / k)` entries per row.
    Denominator,
    /// Keep `min(k, T0)` entries per row.
    Count,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub pool_kernels: Vec<usize>,
    pub pool_pads: Vec<usize>,
    pub topk_enabled: bool,
    pub topk: (usize, usize),
    pub topk_mode: TopKMode,
    pub multiscale_pool_enabled: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            embed_dim: 32,
            heads: 8,
            pool_kernels: alloc::vec![3, 5, 7],
            pool_pads: alloc::vec![1, 2, 3],
            topk_enabled: true,
            topk: (2, 3),
            topk_mode: TopKMode::Denominator,
            multiscale_pool_enabled: true,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(cfg_err!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.pool_kernels.len() != self.pool_pads.len() {
            return Err(cfg_err!(
                "{} pooling kernels but {} paddings",
                self.pool_kernels.len(),
                self.pool_pads.len()
            ));
        }
        if self.multiscale_pool_enabled && self.pool_kernels.is_empty() {
            return Err(cfg_err!("multiscale pooling needs at least one kernel"));
        }
        for (&k, &p) in self.pool_kernels.iter().zip(&self.pool_pads) {
            if k == 0 || k % 2 == 0 || p != (k - 1) / 2 {
                return Err(cfg_err!("pool kernel {} with padding {} does not preserve length", k, p));
            }
        }
        if self.topk.0 == 0 || self.topk.1 == 0 {
            return Err(cfg_err!("top-k parameters must be at least 1, got {:?}", self.topk));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Keep counts for a row of `t0` scores.
    pub fn keep_counts(&self, t0: usize) -> (usize, usize) {
        let f = |k: usize| match self.topk_mode {
            TopKMode::Denominator => t0.div_ceil(k),
            TopKMode::Count => k.min(t0),
        };
        (f(self.topk.0).max(1), f(self.topk.1).max(1))
    }
}

/// Parameters of one attention block. `alpha`/`beta` exist only for sparse
/// blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub mix: Option<(ParamId, ParamId)>,
}

impl AttentionParams {
    /// Registers `{prefix}.w_q`, `w_k`, `w_v` and, when `sparse`, the mixing
    /// scalars `{prefix}.alpha` and `{prefix}.beta` (both initialized to 1).
    pub fn register<T: Scalar, R: rand::Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &AttentionConfig,
        sparse: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let u = cfg.embed_dim;
        let wq = store.add(&format!("{prefix}.w_q"), uniform_fan_in(&[u, u], u, rng))?;
        let wk = store.add(&format!("{prefix}.w_k"), uniform_fan_in(&[u, u], u, rng))?;
        let wv = store.add(&format!("{prefix}.w_v"), uniform_fan_in(&[u, u], u, rng))?;
        let mix = if sparse {
            let a = store.add(&format!("{prefix}.alpha"), Tensor::scalar(T::one()))?;
            let b = store.add(&format!("{prefix}.beta"), Tensor::scalar(T::one()))?;
            Some((a, b))
        } else {
            None
        };
        Ok(AttentionParams { wq, wk, wv, mix })
    }

    pub fn is_sparse(&self) -> bool {
        self.mix.is_some()
    }

    /// Number of trainable scalars for a block of width `embed_dim`.
    pub fn count(embed_dim: usize, sparse: bool) -> usize {
        3 * embed_dim * embed_dim + if sparse { 2 } else { 0 }
    }
}

/// Sum of the configured length-preserving average pools of `[B, U, T0]`
/// along time.
pub fn multiscale_pool<T: Scalar>(tape: &mut Tape<T>, y: Var, cfg: &AttentionConfig) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    if shape.len() != 3 {
        return Err(dim_err!("multiscale_pool expects [B, U, T0], got {:?}", shape));
    }
    if cfg.pool_kernels.len() != cfg.pool_pads.len() || cfg.pool_kernels.is_empty() {
        return Err(cfg_err!("pool kernel and padding lists must be non-empty and aligned"));
    }
    let y4 = tape.reshape(y, &[shape[0], shape[1], 1, shape[2]])?;
    let mut acc: Option<Var> = None;
    for (&k, &p) in cfg.pool_kernels.iter().zip(&cfg.pool_pads) {
        if k == 0 || p * 2 + 1 != k {
            return Err(cfg_err!("pool kernel {} with padding {} does not preserve length", k, p));
        }
        let spec = PoolSpec { kernel: (1, k), stride: (1, 1), padding: (0, p), include_pad: true };
        let pooled = tape.avg_pool(y4, spec)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, pooled)?,
            None => pooled,
        });
    }
    tape.reshape(acc.expect("at least one pool"), &shape)
}

/// Splits `[B, T0, U]` into `[B, h, T0, U/h]`.
fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let r = tape.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    tape.permute(r, &[0, 2, 1, 3])
}

/// Attention block output `[B, U, T0]` for query source `x` and key/value
/// source `y`. Does not include the residual.
pub fn msca_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: &AttentionParams,
    x: Var,
    y: Var,
    cfg: &AttentionConfig,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 3 || tape.shape(y) != &xs[..] {
        return Err(dim_err!("msca expects equal [B, U, T0] inputs, got {:?} and {:?}", xs, tape.shape(y)));
    }
    if cfg.heads == 0 || xs[1] % cfg.heads != 0 {
        return Err(cfg_err!("embedding width {} not divisible by {} heads", xs[1], cfg.heads));
    }
    if xs[1] != cfg.embed_dim {
        return Err(dim_err!("embedding width {} but attention configured for {}", xs[1], cfg.embed_dim));
    }
    let (b, u, t0) = (xs[0], xs[1], xs[2]);
    let heads = cfg.heads;
    let y_src = if cfg.multiscale_pool_enabled { multiscale_pool(tape, y, cfg)? } else { y };

    let x_tok = tape.permute(x, &[0, 2, 1])?;
    let y_tok = tape.permute(y_src, &[0, 2, 1])?;
    let wq = tape.param(store, params.wq);
    let wk = tape.param(store, params.wk);
    let wv = tape.param(store, params.wv);
    let q = tape.linear(x_tok, wq, None)?;
    let k = tape.linear(y_tok, wk, None)?;
    let v = tape.linear(y_tok, wv, None)?;
    let q = split_heads(tape, q, heads)?;
    let k = split_heads(tape, k, heads)?;
    let v = split_heads(tape, v, heads)?;

    let scores = tape.matmul(q, k, true)?;
    let inv_sqrt_dk = T::one() / T::from_usize_lossy(cfg.head_dim()).sqrt();
    let scores = tape.scale(scores, inv_sqrt_dk)?;

    let attended = match params.mix {
        Some((alpha, beta)) => {
            let (keep1, keep2) = cfg.keep_counts(t0);
            let p1 = tape.topk_softmax(scores, keep1)?;
            let p2 = tape.topk_softmax(scores, keep2)?;
            let o1 = tape.matmul(p1, v, false)?;
            let o2 = tape.matmul(p2, v, false)?;
            let a = tape.param(store, alpha);
            let bt = tape.param(store, beta);
            let o1 = tape.scale_by(o1, a)?;
            let o2 = tape.scale_by(o2, bt)?;
            tape.add(o1, o2)?
        }
        None => {
            let p = tape.softmax(scores)?;
            tape.matmul(p, v, false)?
        }
    };
    // [B, h, T0, dk] -> [B, T0, h, dk] -> [B, T0, U] -> [B, U, T0]
    let merged = tape.permute(attended, &[0, 2, 1, 3])?;
    let merged = tape.reshape(merged, &[b, t0, u])?;
    tape.permute(merged, &[0, 2, 1])
}

/// `M = Z + MHA`.
pub fn residual_fuse<T: Scalar>(tape: &mut Tape<T>, z: Var, mha: Var) -> Result<Var> {
    tape.add(z, mha)
}

/// Forward-only top-k softmax over the last axis of `scores`.
pub fn topk_softmax<T: Scalar>(scores: &Tensor<T>, keep: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(scores.clone());
    let out = tape.topk_softmax(v, keep)?;
    Ok(tape.value(out).clone())
}
