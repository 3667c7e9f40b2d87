use csanet_core::checks::mini_config;
use csanet_core::data::{EegTrial, TrialSet};
use csanet_core::metrics::evaluate;
use csanet_core::model::{AblationNet, ModelConfig};
use csanet_core::rng;
use csanet_core::train::{batches, Trainer};
use csanet_core::{Scalar, Tensor};
use rand::Rng;

/// Two classes separated by the frequency of a sinusoid on every channel.
fn toy_set(per_class: usize, seed: u64) -> TrialSet {
    let cfg = mini_config();
    let (c, t) = (cfg.channels, cfg.time_steps);
    let mut r = rng::stream(seed, "toy");
    let mut set = TrialSet::new(c, t, 2);
    for i in 0..2 * per_class {
        let label = i % 2;
        let freq = if label == 0 { 2.0 } else { 9.0 };
        let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let samples = (0..c * t)
            .map(|k| ((freq * (k % t) as f64 / t as f64 * std::f64::consts::TAU + phase).sin() + r.random_range(-0.3..0.3)) as f32)
            .collect();
        set.push(EegTrial { samples, label, subject_id: 1 + (i % 3) as u32, session_id: 1 }).unwrap();
    }
    set
}

fn losses<T: Scalar>(cfg: &ModelConfig, seed: u64, epochs: usize) -> Vec<f64> {
    let set = toy_set(6, 1);
    let mut tr = Trainer::<T>::new(cfg.clone(), seed, 0.0009, 4).unwrap();
    (0..epochs).map(|_| tr.train_epoch(&set).unwrap().loss).collect()
}

#[test]
fn seeded_runs_replay_bitwise_in_f64() {
    let mut cfg = mini_config();
    cfg.sr_enabled = true;
    let a = losses::<f64>(&cfg, 42, 5);
    let b = losses::<f64>(&cfg, 42, 5);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_ne!(a, losses::<f64>(&cfg, 43, 5));
}

#[test]
fn seeded_runs_replay_in_f32() {
    let mut cfg = mini_config();
    cfg.sr_enabled = true;
    let a = losses::<f32>(&cfg, 7, 5);
    let b = losses::<f32>(&cfg, 7, 5);
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-7));
}

#[test]
fn augmentation_doubles_the_effective_batch() {
    let set = toy_set(5, 2);
    let mut base = mini_config();
    base.sr_enabled = true;
    let mut on = Trainer::<f32>::new(AblationNet::Net1.apply(&base), 3, 0.0009, 4).unwrap();
    let mut off = Trainer::<f32>::new(AblationNet::Net2.apply(&base), 3, 0.0009, 4).unwrap();
    let a = on.train_epoch(&set).unwrap();
    let b = off.train_epoch(&set).unwrap();
    assert_eq!(b.effective_batch, 4);
    assert_eq!(a.effective_batch, 8);
    assert_eq!(a.steps, b.steps);
}

#[test]
fn every_ablation_variant_trains() {
    let set = toy_set(4, 3);
    let mut base = mini_config();
    base.sr_enabled = true;
    for net in AblationNet::ALL {
        let mut tr = Trainer::<f32>::new(net.apply(&base), 5, 0.0009, 4).unwrap();
        for e in 1..=2 {
            let stats = tr.train_epoch(&set).unwrap();
            assert_eq!(stats.epoch, e);
            assert!(stats.loss.is_finite(), "{}", net.name());
        }
    }
}

#[test]
fn training_lowers_the_loss() {
    let set = toy_set(8, 4);
    let mut tr = Trainer::<f32>::new(mini_config(), 9, 0.01, 8).unwrap();
    let first = tr.train_epoch(&set).unwrap().loss;
    let mut last = first;
    for _ in 0..40 {
        last = tr.train_epoch(&set).unwrap().loss;
    }
    assert!(last < first, "{first} -> {last}");
    assert!(evaluate(&tr.model, &set, 16).unwrap().acc > 0.5);
}

#[test]
fn zero_epochs_keep_initialization() {
    let a = Trainer::<f32>::new(mini_config(), 11, 0.0009, 4).unwrap();
    let b = Trainer::<f32>::new(mini_config(), 11, 0.0009, 4).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.epochs_done(), 0);
}

#[test]
fn running_statistics_move_during_training() {
    let set = toy_set(4, 5);
    let mut tr = Trainer::<f32>::new(mini_config(), 12, 0.0009, 4).unwrap();
    let id = tr.model.params().find("branch1.bn1.running_var").unwrap();
    let before = tr.model.params().get(id).tensor.clone();
    tr.train_epoch(&set).unwrap();
    assert_ne!(tr.model.params().get(id).tensor.data(), before.data());
}

#[test]
fn trailing_singleton_batch_is_merged() {
    assert!(batches(&(0..13).collect::<Vec<_>>(), 4).iter().all(|b| b.len() >= 2));
    let set = toy_set(4, 6).subset(&(0..5).collect::<Vec<_>>());
    let mut tr = Trainer::<f32>::new(mini_config(), 13, 0.0009, 4).unwrap();
    let stats = tr.train_epoch(&set).unwrap();
    assert_eq!(stats.steps, 1);
    assert_eq!(stats.effective_batch, 5);
}

#[test]
fn constant_classifier_has_prevalence_accuracy_and_zero_kappa() {
    let set = toy_set(5, 7).subset(&[0, 1, 2, 3, 4, 5, 6, 8]);
    let mut tr = Trainer::<f32>::new(mini_config(), 14, 0.0009, 4).unwrap();
    let w = tr.model.params().get(tr.model.params().find("classifier.weight").unwrap()).tensor.shape().to_vec();
    tr.model.load_named("classifier.weight", Tensor::zeros(&w)).unwrap();
    tr.model.load_named("classifier.bias", Tensor::new(&[2], vec![0.0, 1.0]).unwrap()).unwrap();
    let report = evaluate(&tr.model, &set, 3).unwrap();
    let prevalence = set.labels().iter().filter(|&&l| l == 1).count() as f64 / set.len() as f64;
    assert_eq!(report.acc, prevalence);
    assert_eq!(report.kappa, 0.0);
    assert_eq!(report.per_class_recall, vec![0.0, 1.0]);
}

#[test]
fn evaluation_rejects_mismatched_data() {
    let tr = Trainer::<f32>::new(mini_config(), 15, 0.0009, 4).unwrap();
    let other = TrialSet::new(4, 64, 2);
    assert!(evaluate(&tr.model, &other, 4).is_err());
}
