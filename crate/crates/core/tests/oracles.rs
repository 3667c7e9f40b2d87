use csanet_core::attention::{msca_forward, AttentionConfig, AttentionParams};
use csanet_core::reference;
use csanet_core::rng::{self, StreamRng};
use csanet_core::{Conv2dSpec, ParamStore, PoolSpec, Tape, Tensor};
use rand::Rng;

const TOL: f64 = 1e-6;

fn rand_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv2d_moving_sum() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 1, 1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = t.constant(Tensor::from_f64(&[1, 1, 1, 2], &[1.0, 1.0]).unwrap());
    let y = t.conv2d(x, w, None, Conv2dSpec::default()).unwrap();
    assert_eq!(t.value(y).data(), &[3.0, 5.0, 7.0]);
}

#[test]
fn conv2d_pointwise_channel_merge() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 2, 1, 3], &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap());
    let w = t.constant(Tensor::from_f64(&[1, 2, 1, 1], &[1.0, 1.0]).unwrap());
    let y = t.conv2d(x, w, None, Conv2dSpec::default()).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 1, 1, 3]);
    assert_eq!(t.value(y).data(), &[11.0, 22.0, 33.0]);
}

#[test]
fn conv2d_matches_loops_on_reference_shape() {
    let mut rng = rng::stream(1, "conv");
    let x = rand_vec(&mut rng, 2 * 3 * 4 * 5);
    let w = rand_vec(&mut rng, 6 * 3 * 3 * 3);
    let spec = Conv2dSpec::padded((1, 1));
    let (want, ws) = reference::conv2d(&x, [2, 3, 4, 5], &w, [6, 3, 3, 3], None, spec);
    let mut t = Tape::<f64>::new();
    let xv = t.constant(Tensor::new(&[2, 3, 4, 5], x).unwrap());
    let wv = t.constant(Tensor::new(&[6, 3, 3, 3], w).unwrap());
    let y = t.conv2d(xv, wv, None, spec).unwrap();
    assert_eq!(t.value(y).shape(), &ws);
    assert!(max_diff(t.value(y).data(), &want) < TOL);
}

#[test]
fn conv2d_matches_loops_on_random_shapes() {
    let mut rng = rng::stream(2, "conv");
    for case in 0..150 {
        let groups = rng.random_range(1..=3);
        let cin = groups * rng.random_range(1..=2);
        let cout = groups * rng.random_range(1..=3);
        let b = rng.random_range(1..=2);
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let (dh, dw) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let (ph, pw) = (rng.random_range(0..=2), rng.random_range(0..=2));
        let (sh, sw) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let h = rng.random_range(dh * (kh - 1) + 1..=6);
        let w = rng.random_range(dw * (kw - 1) + 1..=9);
        let spec = Conv2dSpec { stride: (sh, sw), padding: (ph, pw), dilation: (dh, dw), groups };
        let x = rand_vec(&mut rng, b * cin * h * w);
        let wt = rand_vec(&mut rng, cout * (cin / groups) * kh * kw);
        let bias = rand_vec(&mut rng, cout);
        let (want, shape) = reference::conv2d(&x, [b, cin, h, w], &wt, [cout, cin / groups, kh, kw], Some(&bias), spec);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::new(&[b, cin, h, w], x).unwrap());
        let wv = t.constant(Tensor::new(&[cout, cin / groups, kh, kw], wt).unwrap());
        let bv = t.constant(Tensor::new(&[cout], bias).unwrap());
        let y = t.conv2d(xv, wv, Some(bv), spec).unwrap();
        assert_eq!(t.value(y).shape(), &shape, "case {case}");
        assert!(max_diff(t.value(y).data(), &want) < TOL, "case {case}");
    }
}

#[test]
fn avg_pool_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 1, 1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = t.avg_pool(x, PoolSpec::along_time(2)).unwrap();
    assert_eq!(t.value(y).data(), &[1.5, 3.5]);

    let x = t.constant(Tensor::from_f64(&[1, 1, 1, 3], &[1.0, 1.0, 1.0]).unwrap());
    let spec = PoolSpec { kernel: (1, 3), stride: (1, 1), padding: (0, 1), include_pad: true };
    let y = t.avg_pool(x, spec).unwrap();
    assert!(max_diff(t.value(y).data(), &[2.0 / 3.0, 1.0, 2.0 / 3.0]) < 1e-15);
}

#[test]
fn avg_pool_length_preserving_kernels() {
    let mut rng = rng::stream(3, "pool");
    let x = Tensor::new(&[1, 1, 1, 17], rand_vec(&mut rng, 17)).unwrap();
    for (k, p) in [(3, 1), (5, 2), (7, 3)] {
        let mut t = Tape::<f64>::new();
        let xv = t.constant(x.clone());
        let spec = PoolSpec { kernel: (1, k), stride: (1, 1), padding: (0, p), include_pad: true };
        let y = t.avg_pool(xv, spec).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 1, 17]);
    }
}

#[test]
fn avg_pool_rejects_oversized_window() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(&[1, 1, 1, 3]));
    assert!(t.avg_pool(x, PoolSpec::along_time(4)).is_err());
}

#[test]
fn avg_pool_matches_loops_on_random_shapes() {
    let mut rng = rng::stream(4, "pool");
    for case in 0..150 {
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=5));
        let spec = PoolSpec {
            kernel: (kh, kw),
            stride: (rng.random_range(1..=2), rng.random_range(1..=3)),
            padding: (rng.random_range(0..kh), rng.random_range(0..kw)),
            include_pad: rng.random_bool(0.5),
        };
        let shape = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(kh..=5), rng.random_range(kw..=11)];
        let x = rand_vec(&mut rng, shape.iter().product());
        let (want, ws) = reference::avg_pool(&x, shape, spec);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::new(&shape, x).unwrap());
        let y = t.avg_pool(xv, spec).unwrap();
        assert_eq!(t.value(y).shape(), &ws, "case {case}");
        assert!(max_diff(t.value(y).data(), &want) < TOL, "case {case}");
    }
}

#[test]
fn linear_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
    let w = t.constant(Tensor::from_f64(&[1, 2], &[1.0, 1.0]).unwrap());
    let b = t.constant(Tensor::from_f64(&[1], &[0.0]).unwrap());
    let y = t.linear(x, w, Some(b)).unwrap();
    assert_eq!(t.value(y).data(), &[3.0]);

    let x = t.constant(Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
    let eye = t.constant(Tensor::from_f64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let y = t.linear(x, eye, None).unwrap();
    assert_eq!(t.value(y).data(), t.value(x).data());

    let bad = t.constant(Tensor::zeros(&[2, 4]));
    assert!(t.linear(x, bad, None).is_err());
}

#[test]
fn linear_matches_loops_on_random_shapes() {
    let mut rng = rng::stream(5, "linear");
    for case in 0..150 {
        let (rows, din, dout) = if case == 0 { (4, 8, 5) } else { (rng.random_range(1..=6), rng.random_range(1..=9), rng.random_range(1..=7)) };
        let x = rand_vec(&mut rng, rows * din);
        let w = rand_vec(&mut rng, dout * din);
        let b = rand_vec(&mut rng, dout);
        let want = reference::linear(&x, rows, din, &w, dout, Some(&b));
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::new(&[rows, din], x).unwrap());
        let wv = t.constant(Tensor::new(&[dout, din], w).unwrap());
        let bv = t.constant(Tensor::new(&[dout], b).unwrap());
        let y = t.linear(xv, wv, Some(bv)).unwrap();
        assert!(max_diff(t.value(y).data(), &want) < TOL, "case {case}");
    }
}

#[test]
fn dense_attention_matches_loops_on_random_shapes() {
    let mut rng = rng::stream(6, "attention");
    for case in 0..120 {
        let heads = rng.random_range(1..=3);
        let u = heads * rng.random_range(1..=3);
        let t0 = rng.random_range(1..=6);
        let b = rng.random_range(1..=2);
        let cfg = AttentionConfig {
            embed_dim: u,
            heads,
            topk_enabled: false,
            multiscale_pool_enabled: false,
            ..AttentionConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let params = AttentionParams::register(&mut store, "a", &cfg, false, &mut rng).unwrap();
        let x = rand_vec(&mut rng, b * u * t0);
        let y = if case % 2 == 0 { x.clone() } else { rand_vec(&mut rng, b * u * t0) };
        let want = reference::dense_attention(
            &x,
            &y,
            b,
            u,
            t0,
            store.get(params.wq).tensor.data(),
            store.get(params.wk).tensor.data(),
            store.get(params.wv).tensor.data(),
            heads,
        );
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::new(&[b, u, t0], x).unwrap());
        let yv = t.constant(Tensor::new(&[b, u, t0], y).unwrap());
        let out = msca_forward(&mut t, &store, &params, xv, yv, &cfg).unwrap();
        assert_eq!(t.value(out).shape(), &[b, u, t0]);
        assert!(max_diff(t.value(out).data(), &want) < TOL, "case {case}");
    }
}

#[test]
fn multiscale_pool_is_sum_of_pools() {
    use csanet_core::attention::multiscale_pool;
    let mut rng = rng::stream(7, "pool");
    let cfg = AttentionConfig { embed_dim: 4, heads: 1, ..AttentionConfig::default() };
    let x = rand_vec(&mut rng, 2 * 4 * 17);
    let mut want = vec![0.0; x.len()];
    for (&k, &p) in cfg.pool_kernels.iter().zip(&cfg.pool_pads) {
        let spec = PoolSpec { kernel: (1, k), stride: (1, 1), padding: (0, p), include_pad: true };
        let (pooled, _) = reference::avg_pool(&x, [2, 4, 1, 17], spec);
        want.iter_mut().zip(pooled).for_each(|(w, v)| *w += v);
    }
    let mut t = Tape::<f64>::new();
    let xv = t.constant(Tensor::new(&[2, 4, 17], x).unwrap());
    let y = multiscale_pool(&mut t, xv, &cfg).unwrap();
    assert!(max_diff(t.value(y).data(), &want) < TOL);

    let c = t.constant(Tensor::full(&[1, 4, 17], 2.0));
    let y = multiscale_pool(&mut t, c, &cfg).unwrap();
    for row in t.value(y).data().chunks(17) {
        assert!(row[3..14].iter().all(|&v| (v - 6.0).abs() < 1e-12));
        assert!(row[0] < 6.0 && row[16] < 6.0);
    }

    let single = AttentionConfig { pool_kernels: vec![1], pool_pads: vec![0], ..cfg.clone() };
    let y = multiscale_pool(&mut t, xv, &single).unwrap();
    assert_eq!(t.value(y).data(), t.value(xv).data());
}
