//! Named gradient-check scopes covering every differentiable operation and a
//! miniature end-to-end model, shared by the tests and the command line.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::{msca_forward, AttentionConfig, AttentionParams};
use crate::autodiff::{PoolSpec, Tape, Var};
use crate::error::{cfg_err, Result};
use crate::gradcheck::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport};
use crate::kernels::Conv2dSpec;
use crate::model::{CsanetModel, ForwardCtx, ModelConfig, TcnConfig};
use crate::param::ParamStore;
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;

/// Relative-error bound every scope must meet.
pub const TOLERANCE: f64 = 1e-3;

pub const SCOPES: &[&str] = &[
    "conv2d",
    "conv2d_depthwise",
    "avg_pool",
    "linear_cross_entropy",
    "matmul",
    "batch_norm",
    "elu",
    "dropout",
    "softmax",
    "topk_softmax",
    "elementwise",
    "shape_ops",
    "msca",
    "model-mini",
];

fn random(shape: &[usize], rng: &mut StreamRng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("positive shape")
}

/// `Σ r ⊙ v` with fixed random `r`, so every output coordinate matters.
fn weighted_sum(tape: &mut Tape<f64>, v: Var, salt: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let r = tape.constant(random(&shape, &mut rng::stream(salt, "weights")));
    let p = tape.mul(v, r)?;
    tape.sum(p)
}

/// The configuration used by the `model-mini` scope: three channels, 64
/// samples, two classes and narrow layers, giving four attention tokens.
pub fn mini_config() -> ModelConfig {
    let mut c = ModelConfig::new(3, 64, 2);
    c.temporal_kernels = vec![9, 7, 5, 3];
    c.temporal_filters = vec![2; 4];
    c.depth_multiplier = 2;
    c.pools = (4, 4);
    c.spa_filters = 4;
    c.spa_kernel = 3;
    c.attention.embed_dim = 4;
    c.attention.heads = 2;
    c.tcn = TcnConfig { dilations: vec![1, 2], kernel: 2, filters: 4, dropout: 0.3 };
    c.sr_enabled = false;
    c
}

fn options(max_coords: Option<usize>) -> GradCheckOptions {
    GradCheckOptions { max_coords, ..GradCheckOptions::default() }
}

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn op_case(name: &str) -> Option<(Vec<Vec<usize>>, Builder)> {
    let case: (Vec<Vec<usize>>, Builder) = match name {
        "conv2d" => (
            vec![vec![2, 3, 5, 6], vec![4, 3, 3, 3], vec![4]],
            Box::new(|t, v| {
                let spec = Conv2dSpec { stride: (1, 2), padding: (1, 1), ..Conv2dSpec::default() };
                let y = t.conv2d(v[0], v[1], Some(v[2]), spec)?;
                weighted_sum(t, y, 1)
            }),
        ),
        "conv2d_depthwise" => (
            vec![vec![2, 3, 4, 7], vec![6, 1, 3, 2]],
            Box::new(|t, v| {
                let spec = Conv2dSpec::padded((0, 1)).grouped(3).dilated((1, 2));
                let y = t.conv2d(v[0], v[1], None, spec)?;
                weighted_sum(t, y, 2)
            }),
        ),
        "avg_pool" => (
            vec![vec![2, 2, 3, 9]],
            Box::new(|t, v| {
                let a = t.avg_pool(v[0], PoolSpec { kernel: (2, 3), stride: (1, 2), padding: (1, 1), include_pad: true })?;
                let b = t.avg_pool(v[0], PoolSpec { kernel: (1, 3), stride: (1, 1), padding: (0, 1), include_pad: false })?;
                let la = weighted_sum(t, a, 3)?;
                let lb = weighted_sum(t, b, 4)?;
                t.add(la, lb)
            }),
        ),
        "linear_cross_entropy" => (
            vec![vec![5, 6], vec![3, 6], vec![3]],
            Box::new(|t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                t.cross_entropy(y, &[0, 2, 1, 1, 0])
            }),
        ),
        "matmul" => (
            vec![vec![2, 3, 4], vec![2, 4, 5], vec![2, 5, 4]],
            Box::new(|t, v| {
                let ab = t.matmul(v[0], v[1], false)?;
                let ac = t.matmul(v[0], v[2], true)?;
                let s = t.add(ab, ac)?;
                weighted_sum(t, s, 5)
            }),
        ),
        "batch_norm" => (
            vec![vec![3, 2, 2, 4], vec![2], vec![2]],
            Box::new(|t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], None, 1e-5)?;
                let (z, _) = t.batch_norm(v[0], v[1], v[2], Some((&[0.1, -0.2], &[0.5, 2.0])), 1e-5)?;
                let ly = weighted_sum(t, y, 6)?;
                let lz = weighted_sum(t, z, 7)?;
                t.add(ly, lz)
            }),
        ),
        "elu" => (
            vec![vec![4, 6]],
            Box::new(|t, v| {
                let y = t.elu(v[0])?;
                weighted_sum(t, y, 8)
            }),
        ),
        "dropout" => (
            vec![vec![4, 8]],
            Box::new(|t, v| {
                let y = t.dropout(v[0], 0.4, true, &mut rng::stream(9, rng::DROPOUT))?;
                weighted_sum(t, y, 9)
            }),
        ),
        "softmax" => (
            vec![vec![3, 5]],
            Box::new(|t, v| {
                let y = t.softmax(v[0])?;
                weighted_sum(t, y, 10)
            }),
        ),
        "topk_softmax" => (
            vec![vec![4, 7]],
            Box::new(|t, v| {
                let a = t.topk_softmax(v[0], 3)?;
                let b = t.topk_softmax(v[0], 1)?;
                let s = t.add(a, b)?;
                weighted_sum(t, s, 11)
            }),
        ),
        "elementwise" => (
            vec![vec![2, 5], vec![2, 5], vec![1]],
            Box::new(|t, v| {
                let a = t.add(v[0], v[1])?;
                let m = t.mul(a, v[1])?;
                let s = t.scale(m, 0.7)?;
                let sb = t.scale_by(s, v[2])?;
                let mc = t.mul_const(sb, (0..10).map(|i| i as f64 * 0.1 - 0.3).collect())?;
                let p = t.pad_last(mc, 2, 1)?;
                weighted_sum(t, p, 12)
            }),
        ),
        "shape_ops" => (
            vec![vec![2, 3, 4], vec![2, 2, 4]],
            Box::new(|t, v| {
                let c = t.concat(&[v[0], v[1]], 1)?;
                let p = t.permute(c, &[2, 0, 1])?;
                let n = t.narrow(p, 0, 1, 2)?;
                let r = t.reshape(n, &[4, 5])?;
                weighted_sum(t, r, 13)
            }),
        ),
        _ => return None,
    };
    Some(case)
}

fn msca_check(opts: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng::stream(14, rng::INIT);
    let cfg = AttentionConfig { embed_dim: 6, heads: 2, ..AttentionConfig::default() };
    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", random(&[2, 6, 7], &mut r))?;
    let y = store.add("y", random(&[2, 6, 7], &mut r))?;
    let params = AttentionParams::register(&mut store, "msca", &cfg, true, &mut r)?;
    // Distinct mixing weights so the two sparsity levels are separable.
    store.get_mut(params.mix.expect("sparse").1).tensor.data_mut()[0] = 0.6;
    grad_check_params(
        &mut store,
        |t, s| {
            let xv = t.param(s, x);
            let yv = t.param(s, y);
            let out = msca_forward(t, s, &params, xv, yv, &cfg)?;
            weighted_sum(t, out, 15)
        },
        opts,
    )
}

/// End-to-end check of every trainable parameter of the [`mini_config`]
/// model in training mode (batch statistics, fixed dropout masks).
pub fn model_mini_check(opts: GradCheckOptions) -> Result<GradCheckReport> {
    let model = CsanetModel::<f64>::new(mini_config(), &mut rng::stream(16, rng::INIT))?;
    let x = random(&[2, 1, 3, 64], &mut rng::stream(17, "input"));
    let mut store = model.params().clone();
    grad_check_params(
        &mut store,
        |t, s| {
            let mut m = model.clone();
            *m.params_mut() = s.clone();
            let xv = t.constant(x.clone());
            let mut dropout = rng::stream(18, rng::DROPOUT);
            let mut ctx = ForwardCtx::train(&mut dropout);
            let logits = m.forward(t, xv, &mut ctx)?;
            t.cross_entropy(logits, &[0, 1])
        },
        opts,
    )
}

/// Runs the named scope. `max_coords` limits the coordinates checked per
/// input or parameter.
pub fn run_scope(name: &str, max_coords: Option<usize>) -> Result<GradCheckReport> {
    let opts = options(max_coords);
    match name {
        "msca" => msca_check(opts),
        "model-mini" => model_mini_check(opts),
        _ => {
            let (shapes, build) = op_case(name)
                .ok_or_else(|| cfg_err!("unknown gradient-check scope {:?}; valid scopes: {}", name, SCOPES.join(", ")))?;
            let mut r = rng::stream(19, name);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut r)).collect();
            grad_check(build, &inputs, opts)
        }
    }
}
