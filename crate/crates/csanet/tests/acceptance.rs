//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status
//! if any fails. Tolerances are fixed below.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use csanet::checkpoint::{self, Checkpoint, NamedBlob};
use csanet::psd::{branch_psd_report, welch, WelchParams};
use csanet::synth::{generate, SynthSpec};
use csanet::{eegd, report};
use csanet_core::attention::{msca_forward, topk_softmax, AttentionConfig, AttentionParams};
use csanet_core::augment::{segment_bounds, sr_augment, SrConfig};
use csanet_core::checks::{self, SCOPES};
use csanet_core::data::{EegTrial, TrialSet};
use csanet_core::metrics::{accuracy, evaluate, kappa, std_across, ConfusionMatrix, EvalReport};
use csanet_core::model::{count_parameters, AblationNet, CsanetModel, ForwardCtx, FusionMode, ModelConfig};
use csanet_core::rng::{self, StreamRng};
use csanet_core::train::Trainer;
use csanet_core::{reference, Conv2dSpec, ParamStore, PoolSpec, Scalar, Tape, Tensor};
use rand::Rng;

const GRAD_TOL: f64 = 1e-3;
const ORACLE_TOL: f64 = 1e-6;
const ROW_SUM_TOL: f64 = 1e-6;
const OVERFIT_ACC: f64 = 0.95;
const OVERFIT_EPOCHS: usize = 300;
const METRIC_TOL: f64 = 1e-12;
const F32_REPLAY_TOL: f64 = 1e-7;
const FUZZ_CASES: usize = 100;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn rand_vec(r: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradients() -> Outcome {
    let mut worst = ("", 0.0);
    for &scope in SCOPES {
        let r = ok(checks::run_scope(scope, None))?;
        let e = r.max_rel_error();
        ensure!(e <= GRAD_TOL, "{scope}: relative error {e:.3e}");
        if e > worst.1 {
            worst = (scope, e);
        }
    }
    Ok(format!("{} scopes, worst {} at {:.2e}", SCOPES.len(), worst.0, worst.1))
}

fn oracles() -> Outcome {
    let mut r = rng::stream(100, "acceptance-oracles");
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let groups = r.random_range(1..=2);
        let (cin, cout) = (groups * r.random_range(1..=2), groups * r.random_range(1..=3));
        let (kh, kw) = (r.random_range(1..=3), r.random_range(1..=5));
        let spec = Conv2dSpec { stride: (1, r.random_range(1..=2)), padding: (r.random_range(0..=1), r.random_range(0..=2)), dilation: (1, r.random_range(1..=2)), groups };
        let (h, w) = (r.random_range(kh..=5), r.random_range(2 * kw..=12));
        let x = rand_vec(&mut r, 2 * cin * h * w);
        let wt = rand_vec(&mut r, cout * (cin / groups) * kh * kw);
        let (want, shape) = reference::conv2d(&x, [2, cin, h, w], &wt, [cout, cin / groups, kh, kw], None, spec);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(ok(Tensor::new(&[2, cin, h, w], x))?);
        let wv = t.constant(ok(Tensor::new(&[cout, cin / groups, kh, kw], wt))?);
        let y = ok(t.conv2d(xv, wv, None, spec))?;
        ensure!(t.shape(y) == shape, "conv2d case {case}: shape {:?} vs {:?}", t.shape(y), shape);
        worst = worst.max(max_diff(t.value(y).data(), &want));

        let pk = r.random_range(1..=4);
        let ps = PoolSpec { kernel: (1, pk), stride: (1, r.random_range(1..=pk)), padding: (0, r.random_range(0..pk)), include_pad: true };
        let xs = [1, 2, 3, r.random_range(pk..=14)];
        let x = rand_vec(&mut r, xs.iter().product());
        let (want, shape) = reference::avg_pool(&x, xs, ps);
        let xv = t.constant(ok(Tensor::new(&xs, x))?);
        let y = ok(t.avg_pool(xv, ps))?;
        ensure!(t.shape(y) == shape, "avg_pool case {case}: shape mismatch");
        worst = worst.max(max_diff(t.value(y).data(), &want));

        let (rows, din, dout) = (r.random_range(1..=5), r.random_range(1..=6), r.random_range(1..=6));
        let (x, w, b) = (rand_vec(&mut r, rows * din), rand_vec(&mut r, dout * din), rand_vec(&mut r, dout));
        let want = reference::linear(&x, rows, din, &w, dout, Some(&b));
        let xv = t.constant(ok(Tensor::new(&[rows, din], x))?);
        let wv = t.constant(ok(Tensor::new(&[dout, din], w))?);
        let bv = t.constant(ok(Tensor::new(&[dout], b))?);
        let y = ok(t.linear(xv, wv, Some(bv)))?;
        worst = worst.max(max_diff(t.value(y).data(), &want));

        let heads = r.random_range(1..=2);
        let u = heads * r.random_range(1..=3);
        let t0 = r.random_range(1..=7);
        let cfg = AttentionConfig { embed_dim: u, heads, topk_enabled: false, multiscale_pool_enabled: false, ..AttentionConfig::default() };
        let mut store = ParamStore::<f64>::new();
        let p = ok(AttentionParams::register(&mut store, "a", &cfg, false, &mut r))?;
        let (x, yv) = (rand_vec(&mut r, 2 * u * t0), rand_vec(&mut r, 2 * u * t0));
        let data = |id| store.get(id).tensor.data().to_vec();
        let want = reference::dense_attention(&x, &yv, 2, u, t0, &data(p.wq), &data(p.wk), &data(p.wv), heads);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(ok(Tensor::new(&[2, u, t0], x))?);
        let yv = t.constant(ok(Tensor::new(&[2, u, t0], yv))?);
        let out = ok(msca_forward(&mut t, &store, &p, xv, yv, &cfg))?;
        worst = worst.max(max_diff(t.value(out).data(), &want));
    }
    ensure!(worst <= ORACLE_TOL, "max deviation {worst:.3e}");
    Ok(format!("200 cases, max deviation {worst:.1e}"))
}

fn sparsity() -> Outcome {
    let mut r = rng::stream(101, "acceptance-sparsity");
    for _ in 0..200 {
        let width = r.random_range(1..=20);
        let keep = r.random_range(1..=width);
        let s = ok(Tensor::new(&[3, width], rand_vec(&mut r, 3 * width)))?;
        let p = ok(topk_softmax(&s, keep))?;
        for row in p.data().chunks(width) {
            ensure!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL, "row does not sum to one");
            ensure!(row.iter().filter(|&&v| v != 0.0).count() == keep, "support size differs from {keep}");
        }
    }
    let tied = ok(topk_softmax(&Tensor::full(&[1, 5], 1.0f64), 2))?;
    ensure!(tied.data() == [0.5, 0.5, 0.0, 0.0, 0.0], "ties must keep the lowest indices");

    let cfg = AttentionConfig { embed_dim: 8, heads: 2, topk: (1, 3), ..AttentionConfig::default() };
    ensure!(cfg.keep_counts(17) == (17, 6), "keep counts for T0=17: {:?}", cfg.keep_counts(17));
    let mut store = ParamStore::<f64>::new();
    let dense = ok(AttentionParams::register(&mut store, "d", &cfg, false, &mut r))?;
    let sparse = ok(AttentionParams::register(&mut store, "s", &cfg, true, &mut r))?;
    for (d, s) in [(dense.wq, sparse.wq), (dense.wk, sparse.wk), (dense.wv, sparse.wv)] {
        let w = store.get(d).tensor.clone();
        store.get_mut(s).tensor.data_mut().copy_from_slice(w.data());
    }
    let (a, b) = sparse.mix.ok_or("sparse block without mixing weights")?;
    store.get_mut(a).tensor.data_mut()[0] = 1.0;
    store.get_mut(b).tensor.data_mut()[0] = 0.0;
    let mut t = Tape::new();
    let x = t.constant(ok(Tensor::new(&[2, 8, 17], rand_vec(&mut r, 272)))?);
    let y = t.constant(ok(Tensor::new(&[2, 8, 17], rand_vec(&mut r, 272)))?);
    let want = ok(msca_forward(&mut t, &store, &dense, x, y, &cfg))?;
    let got = ok(msca_forward(&mut t, &store, &sparse, x, y, &cfg))?;
    let d = max_diff(t.value(want).data(), t.value(got).data());
    ensure!(d <= ORACLE_TOL, "full keep with alpha=1, beta=0 differs from dense by {d:.3e}");
    Ok(format!("600 rows exact support, dense reduction within {d:.1e}"))
}

fn random_input(shape: &[usize], seed: u64) -> Result<Tensor<f32>, String> {
    let mut r = rng::stream(seed, "acceptance-input");
    ok(Tensor::new(shape, (0..shape.iter().product()).map(|_| r.random_range(-1.0..1.0)).collect()))
}

fn shapes() -> Outcome {
    let cfg = ModelConfig::bcic_iv_2a();
    ensure!(cfg.t0() == 17, "T0 = {}", cfg.t0());
    let model = ok(CsanetModel::<f32>::new(cfg.clone(), &mut rng::stream(1, rng::INIT)))?;
    let mut t = Tape::new();
    let x = t.constant(random_input(&[2, 1, 22, 1000], 1)?);
    for i in 0..4 {
        let z = ok(model.branch_forward(&mut t, x, i, &mut ForwardCtx::eval()))?;
        ensure!(t.shape(z) == [2, 32, 17], "branch {} shape {:?}", i + 1, t.shape(z));
    }
    let logits = ok(model.predict(&random_input(&[3, 1, 22, 1000], 2)?))?;
    ensure!(logits.shape() == [3, 4], "logits {:?}", logits.shape());
    let counts = count_parameters(&cfg);
    ensure!(counts.total == model.params().trainable_count(), "parameter count {} vs {}", counts.total, model.params().trainable_count());

    let seed_cfg = ModelConfig::seed_emotion();
    let m = ok(CsanetModel::<f32>::new(seed_cfg.clone(), &mut rng::stream(1, rng::INIT)))?;
    let logits = ok(m.predict(&random_input(&[2, 1, seed_cfg.channels, seed_cfg.time_steps], 3)?))?;
    ensure!(logits.shape() == [2, 3], "SEED logits {:?}", logits.shape());
    Ok(format!("branches [2,32,17], logits [3,4], {} parameters", counts.total))
}

fn sr_contract(input: &TrialSet, out: &TrialSet, segments: usize) -> bool {
    let n = input.len();
    if out.len() != 2 * n || out.trials[..n] != input.trials[..] {
        return false;
    }
    let t = input.time_steps;
    let bounds = segment_bounds(t, segments).expect("valid segments");
    out.trials[n..].iter().all(|syn| {
        bounds.iter().all(|r| {
            input.trials.iter().any(|src| {
                src.label == syn.label
                    && (0..input.channels).all(|ch| {
                        let (a, b) = (&syn.samples[ch * t + r.start..ch * t + r.end], &src.samples[ch * t + r.start..ch * t + r.end]);
                        a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
                    })
            })
        })
    })
}

fn augmentation() -> Outcome {
    let mut r = rng::stream(102, "acceptance-batches");
    let mut aug = rng::stream(102, rng::AUGMENT);
    for i in 0..1000 {
        let n = r.random_range(1..=16);
        let segments = r.random_range(1..=8);
        let t = r.random_range(segments..=48);
        let mut batch = TrialSet::new(3, t, 4);
        for _ in 0..n {
            let samples = (0..3 * t).map(|_| r.random_range(-5.0f32..5.0)).collect();
            ok(batch.push(EegTrial { samples, label: r.random_range(0..4), subject_id: 1, session_id: 1 }))?;
        }
        let out = ok(sr_augment(&batch, &SrConfig { segments, enabled: true }, &mut aug))?;
        ensure!(sr_contract(&batch, &out, segments), "batch {i} violates slot/class provenance");
    }
    Ok("1000 batches, every segment copied from a same-class trial at the same slot".into())
}

fn overfit() -> Outcome {
    let set = ok(generate(&SynthSpec::new(32, 8, 256, 4, 3.0, 7)))?;
    let cfg = ModelConfig::new(8, 256, 4);
    let mut tr = ok(Trainer::<f32>::new(cfg, 0, 0.0009, 32))?;
    for epoch in 1..=OVERFIT_EPOCHS {
        ok(tr.train_epoch(&set))?;
        let acc = ok(evaluate(&tr.model, &set, 64))?.acc;
        if acc >= OVERFIT_ACC {
            return Ok(format!("train accuracy {acc:.3} after {epoch} epochs"));
        }
    }
    Err(format!("train accuracy below {OVERFIT_ACC} after {OVERFIT_EPOCHS} epochs"))
}

fn small_set(per_class: usize, seed: u64) -> Result<TrialSet, String> {
    let c = checks::mini_config();
    ok(generate(&SynthSpec::new(per_class, c.channels, c.time_steps, c.n_classes, 3.0, seed)))
}

fn ablations() -> Outcome {
    let set = small_set(8, 1)?;
    let mut base = checks::mini_config();
    base.sr_enabled = true;
    for net in AblationNet::ALL {
        let cfg = net.apply(&base);
        let mut tr = ok(Trainer::<f32>::new(cfg.clone(), 3, 0.0009, 8))?;
        for _ in 0..5 {
            let s = ok(tr.train_epoch(&set))?;
            ensure!(s.loss.is_finite(), "{}: non-finite loss", net.name());
            let want = if cfg.sr_enabled { 16 } else { 8 };
            ensure!(s.effective_batch == want, "{}: effective batch {} instead of {want}", net.name(), s.effective_batch);
        }
    }
    ensure!(!AblationNet::Net2.apply(&base).sr_enabled, "Net2 must disable augmentation");
    let net3 = count_parameters(&AblationNet::Net3.apply(&base));
    ensure!(net3.groups.iter().all(|(g, _)| !g.starts_with("tcn")), "Net3 still has TCN parameters");
    Ok("7 variants x 5 epochs; Net2 batch 1x, others 2x; Net3 has no TCN".into())
}

fn fusion_modes() -> Outcome {
    let set = small_set(6, 2)?;
    let mut shapes = Vec::new();
    for mode in [FusionMode::MainAuxiliary, FusionMode::Hierarchical] {
        let mut cfg = checks::mini_config();
        cfg.fusion_mode = mode;
        let mut tr = ok(Trainer::<f32>::new(cfg, 4, 0.0009, 6))?;
        for _ in 0..5 {
            let s = ok(tr.train_epoch(&set))?;
            ensure!(s.loss.is_finite(), "{mode:?}: non-finite loss");
        }
        let x = ok(set.batch_tensor::<f32>(&[0, 1, 2]))?;
        shapes.push(ok(tr.model.predict(&x))?.shape().to_vec());
    }
    ensure!(shapes[0] == shapes[1] && shapes[0] == [3, 2], "logit shapes {shapes:?}");
    Ok("both modes train 5 epochs, logits [3,2]".into())
}

fn cm(rows: &[&[u64]]) -> Result<ConfusionMatrix, String> {
    ok(ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()))
}

fn metrics() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= METRIC_TOL;
    ensure!(close(ok(accuracy(&cm(&[&[45, 5], &[10, 40]])?))?, 0.85), "accuracy 0.85");
    ensure!(close(ok(kappa(&cm(&[&[40, 10], &[20, 30]])?))?, 0.4), "kappa 0.4");
    ensure!(ok(kappa(&cm(&[&[50, 0], &[0, 50]])?))? == 1.0, "kappa 1 for a diagonal matrix");
    ensure!(ok(kappa(&cm(&[&[25, 25], &[25, 25]])?))? == 0.0, "kappa 0 at chance");
    ensure!(close(ok(std_across(&[0.7, 0.9]))?, 0.1), "std 0.1");
    let truth = [0, 0, 1, 1, 2, 2];
    let pred = [0, 1, 1, 1, 2, 0];
    let r = ok(EvalReport::from_predictions(3, &truth, &pred, &[1, 1, 1, 2, 2, 2]))?;
    ensure!(ok(report::from_csv(&report::to_csv(&r)))? == r, "CSV report does not reload");
    ensure!(ok(report::from_json(&report::to_json(&r)))? == r, "JSON report does not reload");
    Ok("closed forms exact, reports reload".into())
}

fn psd() -> Outcome {
    let fs = 200.0;
    let sine: Vec<f64> = (0..2000).map(|i| (std::f64::consts::TAU * 10.0 * i as f64 / fs).sin()).collect();
    let est = ok(welch(&sine, fs, WelchParams::default()))?;
    ensure!((est.peak_hz() - 10.0).abs() <= est.bin_width(), "10 Hz sine peaks at {}", est.peak_hz());

    let cfg = checks::mini_config();
    let mut model = ok(CsanetModel::<f64>::new(cfg.clone(), &mut rng::stream(0, rng::INIT)))?;
    let (k, f) = (cfg.temporal_kernels[0], cfg.temporal_filters[0]);
    let mut w = vec![0.0; f * k];
    for j in 0..f {
        w[j * k + (k - 1) / 2] = 1.0;
    }
    ok(model.load_named("branch1.temporal_conv.weight", ok(Tensor::new(&[f, 1, 1, k], w))?))?;
    let trial = &small_set(1, 3)?.trials[0];
    let rep = ok(branch_psd_report(&model, trial, 0, 250.0, WelchParams { segment_len: Some(32), overlap: 0.5 }))?;
    for a in &rep.after {
        ensure!(max_diff(&a.power, &rep.before.power) <= 1e-12, "identity kernel changed the spectrum");
    }
    Ok(format!("sine peak {:.2} Hz (bin {:.2} Hz), identity kernel preserves spectrum", est.peak_hz(), est.bin_width()))
}

fn losses<T: Scalar>(seed: u64) -> Result<Vec<f64>, String> {
    let set = small_set(6, 4)?;
    let mut cfg = checks::mini_config();
    cfg.sr_enabled = true;
    let mut tr = ok(Trainer::<T>::new(cfg, seed, 0.0009, 4))?;
    (0..5).map(|_| ok(tr.train_epoch(&set)).map(|s| s.loss)).collect()
}

fn determinism() -> Outcome {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let a = losses::<f64>(9)?;
    ensure!(bits(&a) == bits(&losses::<f64>(9)?), "f64 runs differ");
    ensure!(a != losses::<f64>(10)?, "different seeds gave identical runs");
    let (p, q) = (losses::<f32>(9)?, losses::<f32>(9)?);
    let d = max_diff(&p, &q);
    ensure!(d <= F32_REPLAY_TOL, "f32 runs differ by {d:.3e}");
    Ok(format!("5 epochs: f64 bitwise, f32 within {d:.1e}"))
}

fn fuzz() -> Outcome {
    let mut r = rng::stream(103, "acceptance-fuzz");
    for i in 0..FUZZ_CASES {
        let (c, t, l) = (r.random_range(1..=4), r.random_range(1..=32), r.random_range(1..=5));
        let mut set = TrialSet::new(c, t, l);
        for _ in 0..r.random_range(0..=10) {
            let samples = (0..c * t).map(|_| f32::from_bits(r.random::<u32>() & 0x7f7f_ffff)).collect();
            ok(set.push(EegTrial { samples, label: r.random_range(0..l), subject_id: r.random(), session_id: r.random() }))?;
        }
        ensure!(ok(eegd::decode(&ok(eegd::encode(&set))?))? == set, "EEGD case {i} does not round-trip");

        let params: Vec<NamedBlob> = (0..r.random_range(0..=5))
            .map(|k| {
                let shape: Vec<usize> = (0..r.random_range(0..=3)).map(|_| r.random_range(1..=4)).collect();
                let data = (0..shape.iter().product()).map(|_| f32::from_bits(r.random::<u32>() & 0x7f7f_ffff)).collect();
                NamedBlob { name: format!("p{k}.w{}", r.random::<u16>()), shape, data }
            })
            .collect();
        let ck = Checkpoint { config: format!("model.channels={c}\n"), params };
        ensure!(ok(Checkpoint::decode(&ck.encode()))? == ck, "checkpoint case {i} does not round-trip");
    }
    let cfg = checks::mini_config();
    for seed in 0..10 {
        let model = ok(CsanetModel::<f32>::new(cfg.clone(), &mut rng::stream(seed, rng::INIT)))?;
        let back = ok(checkpoint::to_model::<f32>(&ok(Checkpoint::decode(&checkpoint::from_model(&model).encode()))?))?;
        for ((_, a), (_, b)) in back.params().iter().zip(model.params().iter()) {
            ensure!(a.tensor.data() == b.tensor.data(), "model {seed}: {} changed on reload", a.name);
        }
    }
    Ok(format!("{FUZZ_CASES} EEGD and {FUZZ_CASES} checkpoint round trips, 10 models bit-exact"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("gradients", gradients),
        ("oracles", oracles),
        ("sparsity", sparsity),
        ("shapes", shapes),
        ("augmentation", augmentation),
        ("overfit", overfit),
        ("ablations", ablations),
        ("fusion_modes", fusion_modes),
        ("metrics", metrics),
        ("psd", psd),
        ("determinism", determinism),
        ("fuzz", fuzz),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name:<13} {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name:<13} {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
