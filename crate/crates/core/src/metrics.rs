//! Confusion matrices, accuracy, Cohen's kappa and cross-subject spread.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::TrialSet;
use crate::error::{data_err, dim_err, Error, Result};
use crate::model::CsanetModel;
use crate::scalar::Scalar;

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(dim_err!("confusion matrix rows must all have {} entries", n));
        }
        Ok(ConfusionMatrix { classes: n, counts: rows.concat() })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(dim_err!("{} labels but {} predictions", truth.len(), predicted.len()));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(data_err!("class pair ({}, {}) outside {} classes", truth, predicted, self.classes));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|j| self.get(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, k)).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::new(self.classes);
        for i in 0..self.classes {
            for j in 0..self.classes {
                t.counts[j * self.classes + i] = self.get(i, j);
            }
        }
        t
    }

    /// Recall per true class; classes without instances report 0.
    pub fn recalls(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let r = self.row_sum(k);
                if r == 0 {
                    0.0
                } else {
                    self.get(k, k) as f64 / r as f64
                }
            })
            .collect()
    }
}

/// Fraction of correct predictions.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(data_err!("accuracy of an empty confusion matrix"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Population standard deviation (divisor `M`).
pub fn std_across(accs: &[f64]) -> Result<f64> {
    if accs.is_empty() {
        return Err(data_err!("standard deviation of an empty list"));
    }
    let m = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / m;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / m;
    Ok(num_traits::Float::sqrt(var))
}

/// Cohen's kappa `(p_o - p_e) / (1 - p_e)`.
///
/// When chance agreement is total (`p_e = 1`, detected exactly in integer
/// arithmetic) the result is 1 for perfect agreement and undefined otherwise.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(data_err!("kappa of an empty confusion matrix"));
    }
    let marginal: u128 = (0..cm.classes()).map(|k| u128::from(cm.row_sum(k)) * u128::from(cm.col_sum(k))).sum();
    let total_sq = u128::from(total) * u128::from(total);
    let p_o = cm.trace() as f64 / total as f64;
    if marginal == total_sq {
        return if cm.trace() == total {
            Ok(1.0)
        } else {
            Err(Error::Undefined(alloc::string::String::from("kappa with chance agreement 1 and imperfect accuracy")))
        };
    }
    let p_e = marginal as f64 / total_sq as f64;
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub acc: f64,
    pub kappa: f64,
    pub per_class_recall: Vec<f64>,
    /// `(subject, accuracy)` for each subject in the evaluated set.
    pub per_subject: Vec<(u32, f64)>,
    /// Population spread of `per_subject`, when there is more than one subject.
    pub std: Option<f64>,
}

impl EvalReport {
    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize], subjects: &[u32]) -> Result<Self> {
        let confusion = ConfusionMatrix::from_predictions(classes, truth, predicted)?;
        let acc = accuracy(&confusion)?;
        let kappa = kappa(&confusion)?;
        let per_class_recall = confusion.recalls();
        let mut ids: Vec<u32> = subjects.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let per_subject: Vec<(u32, f64)> = ids
            .iter()
            .map(|&s| {
                let (hit, n) = truth
                    .iter()
                    .zip(predicted)
                    .zip(subjects)
                    .filter(|(_, &sj)| sj == s)
                    .fold((0usize, 0usize), |(h, n), ((t, p), _)| (h + usize::from(t == p), n + 1));
                (s, hit as f64 / n as f64)
            })
            .collect();
        let std = if per_subject.len() > 1 {
            Some(std_across(&per_subject.iter().map(|p| p.1).collect::<Vec<_>>())?)
        } else {
            None
        };
        Ok(EvalReport { confusion, acc, kappa, per_class_recall, per_subject, std })
    }
}

/// Evaluation-mode predictions for every trial of `set`, in chunks of
/// `batch_size`.
pub fn predict_set<T: Scalar>(model: &CsanetModel<T>, set: &TrialSet, batch_size: usize) -> Result<Vec<usize>> {
    let cfg = model.config();
    if set.channels != cfg.channels || set.time_steps != cfg.time_steps || set.n_classes != cfg.n_classes {
        return Err(Error::Config(alloc::format!(
            "model expects {}x{} trials with {} classes, data has {}x{} with {}",
            cfg.channels,
            cfg.time_steps,
            cfg.n_classes,
            set.channels,
            set.time_steps,
            set.n_classes
        )));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = set.batch_tensor::<T>(chunk)?;
        let logits = model.predict(&x)?;
        logits.check_finite("logits")?;
        out.extend(logits.argmax_rows());
    }
    Ok(out)
}

/// Deterministic evaluation of `model` on `set`.
pub fn evaluate<T: Scalar>(model: &CsanetModel<T>, set: &TrialSet, batch_size: usize) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(data_err!("cannot evaluate on an empty set"));
    }
    let pred = predict_set(model, set, batch_size)?;
    let subjects: Vec<u32> = set.trials.iter().map(|t| t.subject_id).collect();
    EvalReport::from_predictions(set.n_classes, &set.labels(), &pred, &subjects)
}
