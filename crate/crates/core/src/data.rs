//! Trial containers, dataset splits and PERCLOS labelling.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{cfg_err, data_err, dim_err, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One labelled `channels × time_steps` recording, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EegTrial {
    pub samples: Vec<f32>,
    pub label: usize,
    pub subject_id: u32,
    pub session_id: u32,
}

/// Homogeneous collection of trials.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub channels: usize,
    pub time_steps: usize,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub trials: Vec<EegTrial>,
}

impl TrialSet {
    pub fn new(channels: usize, time_steps: usize, n_classes: usize) -> Self {
        let class_names = (0..n_classes).map(|k| alloc::format!("class{k}")).collect();
        TrialSet { channels, time_steps, n_classes, class_names, trials: Vec::new() }
    }

    /// Empty set with the same dimensions and class names.
    pub fn empty_like(&self) -> Self {
        TrialSet { trials: Vec::new(), class_names: self.class_names.clone(), ..*self }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn trial_len(&self) -> usize {
        self.channels * self.time_steps
    }

    pub fn check_trial(&self, t: &EegTrial) -> Result<()> {
        if t.samples.len() != self.trial_len() {
            return Err(dim_err!("trial has {} samples, expected {}", t.samples.len(), self.trial_len()));
        }
        if t.label >= self.n_classes {
            return Err(data_err!("label {} outside [0, {})", t.label, self.n_classes));
        }
        if t.samples.iter().any(|v| !v.is_finite()) {
            return Err(data_err!("trial contains non-finite samples"));
        }
        Ok(())
    }

    pub fn push(&mut self, t: EegTrial) -> Result<()> {
        self.check_trial(&t)?;
        self.trials.push(t);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.trials.iter().try_for_each(|t| self.check_trial(t))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut s = self.empty_like();
        s.trials = indices.iter().map(|&i| self.trials[i].clone()).collect();
        s
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.label).collect()
    }

    /// `[B, 1, C, T]` input tensor for the trials at `indices`.
    pub fn batch_tensor<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.trial_len());
        for &i in indices {
            data.extend(self.trials[i].samples.iter().map(|&v| T::from_f64_lossy(f64::from(v))));
        }
        Tensor::new(&[indices.len(), 1, self.channels, self.time_steps], data)
    }

    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.trials.iter().map(|t| t.subject_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn sessions(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.trials.iter().map(|t| t.session_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitStrategy {
    /// Trials from `test_sessions` form the test set, all others train.
    SessionHoldout { test_sessions: Vec<u32> },
    /// Seeded shuffle into `folds` near-equal folds; fold `fold` is the test set.
    KFold { folds: usize, fold: usize },
    /// Leave one subject out.
    Loso { subject: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    pub seed: u64,
}

/// Index form of [`split`]: `(train, test)` positions in `set`, each in
/// ascending order.
pub fn split_indices(set: &TrialSet, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = set.len();
    let test_mask: Vec<bool> = match &spec.strategy {
        SplitStrategy::SessionHoldout { test_sessions } => {
            if test_sessions.is_empty() {
                return Err(cfg_err!("session holdout needs at least one test session"));
            }
            let present = set.sessions();
            if let Some(s) = test_sessions.iter().find(|s| !present.contains(s)) {
                return Err(data_err!("session {} not present in the set", s));
            }
            set.trials.iter().map(|t| test_sessions.contains(&t.session_id)).collect()
        }
        SplitStrategy::Loso { subject } => {
            if !set.subjects().contains(subject) {
                return Err(data_err!("subject {} not present in the set", subject));
            }
            set.trials.iter().map(|t| t.subject_id == *subject).collect()
        }
        SplitStrategy::KFold { folds, fold } => {
            if *folds < 2 || fold >= folds {
                return Err(cfg_err!("fold {} of {} is invalid", fold, folds));
            }
            if n < *folds {
                return Err(data_err!("{} trials cannot fill {} folds", n, folds));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(spec.seed, rng::SHUFFLE));
            // positions [start, end) of the shuffled order belong to `fold`
            let start = fold * n / folds;
            let end = (fold + 1) * n / folds;
            let mut mask = alloc::vec![false; n];
            for &i in &order[start..end] {
                mask[i] = true;
            }
            mask
        }
    };
    let train = (0..n).filter(|&i| !test_mask[i]).collect();
    let test = (0..n).filter(|&i| test_mask[i]).collect();
    Ok((train, test))
}

/// Partitions `set` into `(train, test)`.
pub fn split(set: &TrialSet, spec: &SplitSpec) -> Result<(TrialSet, TrialSet)> {
    let (train, test) = split_indices(set, spec)?;
    Ok((set.subset(&train), set.subset(&test)))
}

/// Per-channel mean and standard deviation, fitted on training data only.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(set: &TrialSet) -> Result<Self> {
        if set.is_empty() {
            return Err(data_err!("cannot fit channel statistics on an empty set"));
        }
        let (c, t) = (set.channels, set.time_steps);
        let n = (set.len() * t) as f64;
        let mut mean = alloc::vec![0.0; c];
        let mut sq = alloc::vec![0.0; c];
        for tr in &set.trials {
            for ch in 0..c {
                for &v in &tr.samples[ch * t..(ch + 1) * t] {
                    mean[ch] += f64::from(v);
                    sq[ch] += f64::from(v) * f64::from(v);
                }
            }
        }
        let mut std = alloc::vec![0.0; c];
        for ch in 0..c {
            mean[ch] /= n;
            let var = (sq[ch] / n - mean[ch] * mean[ch]).max(0.0);
            std[ch] = num_traits::Float::sqrt(var).max(1e-12);
        }
        Ok(ChannelStats { mean, std })
    }

    pub fn apply(&self, set: &mut TrialSet) {
        let t = set.time_steps;
        for tr in &mut set.trials {
            for (ch, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
                for v in &mut tr.samples[ch * t..(ch + 1) * t] {
                    *v = ((f64::from(*v) - m) / s) as f32;
                }
            }
        }
    }
}

pub const PERCLOS_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vigilance {
    Alert,
    Fatigued,
}

/// PERCLOS ratio `(blink + close) / interval`; fatigued when strictly above
/// `threshold`.
pub fn label_perclos(blink_s: f64, close_s: f64, interval_s: f64, threshold: f64) -> Result<(Vigilance, f64)> {
    let finite = blink_s.is_finite() && close_s.is_finite() && interval_s.is_finite();
    if !finite || blink_s < 0.0 || close_s < 0.0 || interval_s <= 0.0 || blink_s + close_s > interval_s {
        return Err(data_err!(
            "invalid PERCLOS durations: blink {}, close {}, interval {}",
            blink_s,
            close_s,
            interval_s
        ));
    }
    let ratio = (blink_s + close_s) / interval_s;
    let state = if ratio > threshold { Vigilance::Fatigued } else { Vigilance::Alert };
    Ok((state, ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy(subjects: u32, sessions: u32, per: usize) -> TrialSet {
        let mut s = TrialSet::new(2, 3, 2);
        for subj in 1..=subjects {
            for sess in 1..=sessions {
                for k in 0..per {
                    let v = (subj * 100 + sess * 10) as f32 + k as f32;
                    s.push(EegTrial { samples: vec![v; 6], label: k % 2, subject_id: subj, session_id: sess }).unwrap();
                }
            }
        }
        s
    }

    #[test]
    fn loso_holds_out_exactly_one_subject() {
        let set = toy(9, 1, 4);
        let (train, test) = split(&set, &SplitSpec { strategy: SplitStrategy::Loso { subject: 3 }, seed: 0 }).unwrap();
        assert_eq!(test.len(), 4);
        assert!(test.trials.iter().all(|t| t.subject_id == 3));
        assert!(train.trials.iter().all(|t| t.subject_id != 3));
        assert_eq!(train.len() + test.len(), set.len());
        let bad = split(&set, &SplitSpec { strategy: SplitStrategy::Loso { subject: 10 }, seed: 0 });
        assert!(matches!(bad, Err(crate::Error::Data(_))));
    }

    #[test]
    fn session_holdout() {
        let set = toy(2, 3, 3);
        let spec = SplitSpec { strategy: SplitStrategy::SessionHoldout { test_sessions: vec![3] }, seed: 0 };
        let (train, test) = split(&set, &spec).unwrap();
        assert!(train.trials.iter().all(|t| t.session_id != 3));
        assert!(test.trials.iter().all(|t| t.session_id == 3));
        assert_eq!(test.len(), 6);
        let spec = SplitSpec { strategy: SplitStrategy::SessionHoldout { test_sessions: vec![4] }, seed: 0 };
        assert!(split(&set, &spec).is_err());
    }

    #[test]
    fn kfold_partitions_with_balanced_sizes() {
        let set = toy(1, 1, 23);
        let mut seen = vec![0usize; set.len()];
        let mut sizes = Vec::new();
        for fold in 0..5 {
            let spec = SplitSpec { strategy: SplitStrategy::KFold { folds: 5, fold }, seed: 11 };
            let (train, test) = split_indices(&set, &spec).unwrap();
            assert_eq!(train.len() + test.len(), set.len());
            assert!(train.iter().all(|i| !test.contains(i)));
            test.iter().for_each(|&i| seen[i] += 1);
            sizes.push(test.len());
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let spec = SplitSpec { strategy: SplitStrategy::KFold { folds: 5, fold: 5 }, seed: 0 };
        assert!(split(&set, &spec).is_err());
    }

    #[test]
    fn perclos_examples() {
        let (v, r) = label_perclos(1.0, 2.0, 8.0, PERCLOS_THRESHOLD).unwrap();
        assert_eq!((v, r), (Vigilance::Fatigued, 0.375));
        assert_eq!(label_perclos(0.0, 0.0, 8.0, PERCLOS_THRESHOLD).unwrap(), (Vigilance::Alert, 0.0));
        let (v, r) = label_perclos(0.35, 0.0, 1.0, PERCLOS_THRESHOLD).unwrap();
        assert_eq!(r, 0.35);
        assert_eq!(v, Vigilance::Alert);
        assert!(label_perclos(-1.0, 0.0, 8.0, 0.35).is_err());
        assert!(label_perclos(5.0, 5.0, 8.0, 0.35).is_err());
        assert!(label_perclos(0.0, 0.0, 0.0, 0.35).is_err());
    }

    #[test]
    fn push_validates() {
        let mut s = TrialSet::new(2, 2, 2);
        assert!(s.push(EegTrial { samples: vec![0.0; 3], label: 0, subject_id: 0, session_id: 0 }).is_err());
        assert!(s.push(EegTrial { samples: vec![0.0; 4], label: 2, subject_id: 0, session_id: 0 }).is_err());
        assert!(s.push(EegTrial { samples: vec![f32::NAN; 4], label: 0, subject_id: 0, session_id: 0 }).is_err());
    }

    #[test]
    fn zscore_on_train_statistics() {
        let set = toy(1, 1, 4);
        let stats = ChannelStats::fit(&set).unwrap();
        let mut z = set.clone();
        stats.apply(&mut z);
        let mean: f64 = z.trials.iter().flat_map(|t| t.samples[..3].iter()).map(|&v| f64::from(v)).sum::<f64>() / 12.0;
        assert!(mean.abs() < 1e-6);
    }
}
