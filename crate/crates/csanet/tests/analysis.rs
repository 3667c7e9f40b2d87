use csanet::psd::{branch_psd_report, to_csv, welch, WelchParams};
use csanet::synth::{generate, SynthSpec, CLASS_FREQS_HZ};
use csanet_core::checks::mini_config;
use csanet_core::model::CsanetModel;
use csanet_core::rng;
use csanet_core::tensor::Tensor;
use rand::Rng;

fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (std::f64::consts::TAU * f * i as f64 / fs).sin()).collect()
}

#[test]
fn sine_peaks_within_one_bin() {
    let fs = 200.0;
    let est = welch(&sine(10.0, fs, 2000), fs, WelchParams::default()).unwrap();
    assert!((est.peak_hz() - 10.0).abs() <= est.bin_width(), "peak {}", est.peak_hz());
    assert_eq!(est.freqs.len(), 129);
    assert_eq!(*est.freqs.last().unwrap(), 100.0);
}

#[test]
fn sine_power_integrates_to_its_variance() {
    let fs = 256.0;
    let est = welch(&sine(32.0, fs, 4096), fs, WelchParams::default()).unwrap();
    let integral = est.total() * est.bin_width();
    assert!((integral - 0.5).abs() < 1e-3, "{integral}");
}

#[test]
fn zero_signal_has_zero_power() {
    let est = welch(&[0.0; 512], 100.0, WelchParams::default()).unwrap();
    assert!(est.power.iter().all(|&p| p == 0.0));
}

#[test]
fn constant_signal_sits_at_dc() {
    let est = welch(&[3.0; 512], 100.0, WelchParams::default()).unwrap();
    assert_eq!(est.peak_hz(), 0.0);
    let dc = est.power[0];
    assert!(est.power[2..].iter().all(|&p| p < dc * 1e-12));
}

#[test]
fn white_noise_is_flat_within_3_db() {
    let mut r = rng::stream(5, "noise");
    let x: Vec<f64> = (0..200_000).map(|_| r.random_range(-1.0..1.0)).collect();
    let est = welch(&x, 1000.0, WelchParams { segment_len: Some(64), overlap: 0.5 }).unwrap();
    let interior = &est.power[1..est.power.len() - 1];
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    for &p in interior {
        assert!((10.0 * (p / mean).log10()).abs() < 3.0);
    }
}

#[test]
fn welch_rejects_bad_parameters() {
    assert!(welch(&[1.0; 10], 0.0, WelchParams::default()).is_err());
    assert!(welch(&[1.0; 10], 10.0, WelchParams { segment_len: Some(20), overlap: 0.5 }).is_err());
    assert!(welch(&[1.0; 10], 10.0, WelchParams { segment_len: None, overlap: 1.0 }).is_err());
}

#[test]
fn csv_has_one_block_per_series() {
    let est = welch(&sine(5.0, 50.0, 64), 50.0, WelchParams { segment_len: Some(16), overlap: 0.5 }).unwrap();
    let csv = to_csv(&[("a".into(), est.clone()), ("b".into(), est)]);
    assert_eq!(csv.matches("freq_hz,power").count(), 2);
    assert!(csv.starts_with("# a\n"));
    assert_eq!(csv.lines().count(), 2 * (2 + 9));
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let spec = SynthSpec::new(5, 4, 128, 4, 3.0, 11);
    let a = generate(&spec).unwrap();
    assert_eq!(a, generate(&spec).unwrap());
    assert_ne!(a, generate(&SynthSpec { seed: 12, ..spec }).unwrap());
    assert_eq!(a.len(), 20);
    for k in 0..4 {
        assert_eq!(a.trials.iter().filter(|t| t.label == k).count(), 5);
    }
}

#[test]
fn synth_empty_set() {
    let set = generate(&SynthSpec::new(0, 2, 32, 2, 1.0, 0)).unwrap();
    assert!(set.is_empty());
    assert_eq!((set.channels, set.time_steps, set.n_classes), (2, 32, 2));
}

#[test]
fn synth_classes_peak_at_their_frequency() {
    let spec = SynthSpec::new(2, 4, 500, 4, 50.0, 3);
    let set = generate(&spec).unwrap();
    for t in &set.trials {
        let ch = (0..4).find(|&c| spec.active(t.label, c)).unwrap();
        let x: Vec<f64> = t.samples[ch * 500..(ch + 1) * 500].iter().map(|&v| f64::from(v)).collect();
        let est = welch(&x, spec.fs, WelchParams::default()).unwrap();
        assert!((est.peak_hz() - CLASS_FREQS_HZ[t.label]).abs() <= est.bin_width());
    }
}

fn trial_for(cfg: &csanet_core::model::ModelConfig) -> csanet_core::data::EegTrial {
    let set = generate(&SynthSpec::new(1, cfg.channels, cfg.time_steps, cfg.n_classes, 5.0, 0)).unwrap();
    set.trials[1].clone()
}

#[test]
fn identity_kernel_keeps_the_spectrum() {
    let cfg = mini_config();
    let mut model = CsanetModel::<f64>::new(cfg.clone(), &mut rng::stream(0, rng::INIT)).unwrap();
    let (k, f) = (cfg.temporal_kernels[0], cfg.temporal_filters[0]);
    let mut w = vec![0.0; f * k];
    for j in 0..f {
        w[j * k + (k - 1) / 2] = 1.0;
    }
    model.load_named("branch1.temporal_conv.weight", Tensor::new(&[f, 1, 1, k], w).unwrap()).unwrap();
    let p = WelchParams { segment_len: Some(32), overlap: 0.5 };
    let r = branch_psd_report(&model, &trial_for(&cfg), 0, 250.0, p).unwrap();
    assert_eq!(r.after.len(), f);
    for a in &r.after {
        for (x, y) in a.power.iter().zip(&r.before.power) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-30));
        }
    }
    assert_eq!(r.series().len(), f + 1);
}

#[test]
fn zero_kernel_removes_all_power() {
    let cfg = mini_config();
    let mut model = CsanetModel::<f64>::new(cfg.clone(), &mut rng::stream(0, rng::INIT)).unwrap();
    let (k, f) = (cfg.temporal_kernels[2], cfg.temporal_filters[2]);
    model.load_named("branch3.temporal_conv.weight", Tensor::zeros(&[f, 1, 1, k])).unwrap();
    let r = branch_psd_report(&model, &trial_for(&cfg), 2, 250.0, WelchParams::default()).unwrap();
    assert!(r.before.total() > 0.0);
    assert!(r.after.iter().all(|a| a.total() == 0.0));
    assert!(branch_psd_report(&model, &trial_for(&cfg), 9, 250.0, WelchParams::default()).is_err());
}
