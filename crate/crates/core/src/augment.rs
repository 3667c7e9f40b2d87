//! Segmentation-and-reconstruction augmentation.
//!
//! Trials of one class are cut into `S` contiguous time segments. A
//! synthetic trial takes segment `s` from a randomly chosen same-class trial
//! of the batch, independently for every slot, so segments never leave
//! their temporal position or their class.

use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::data::{EegTrial, TrialSet};
use crate::error::{cfg_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrConfig {
    pub segments: usize,
    pub enabled: bool,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig { segments: 8, enabled: true }
    }
}

/// Balanced partition of `0..len` into `segments` ranges; the first
/// `len % segments` ranges are one sample longer.
pub fn segment_bounds(len: usize, segments: usize) -> Result<Vec<Range<usize>>> {
    if segments == 0 || len < segments {
        return Err(cfg_err!("cannot cut {} samples into {} segments", len, segments));
    }
    let base = len / segments;
    let extra = len % segments;
    let mut out = Vec::with_capacity(segments);
    let mut start = 0;
    for s in 0..segments {
        let l = base + usize::from(s < extra);
        out.push(start..start + l);
        start += l;
    }
    Ok(out)
}

/// Donor trial index for each slot of one synthetic trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconstruction {
    /// Index of the original trial whose label and tags the result carries.
    pub template: usize,
    pub donors: Vec<usize>,
}

/// Draws one reconstruction per trial of a batch with the given labels.
/// Donors for every slot are sampled uniformly with replacement from the
/// trials sharing the template's label (the template included).
pub fn sr_plan<R: Rng + ?Sized>(labels: &[usize], segments: usize, rng: &mut R) -> Vec<Reconstruction> {
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut pools: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    labels
        .iter()
        .enumerate()
        .map(|(template, &l)| {
            let pool = &pools[l];
            let donors = (0..segments).map(|_| pool[rng.random_range(0..pool.len())]).collect();
            Reconstruction { template, donors }
        })
        .collect()
}

/// Builds the synthetic trials described by `plan`.
pub fn materialize(batch: &TrialSet, plan: &[Reconstruction], bounds: &[Range<usize>]) -> Vec<EegTrial> {
    let (c, t) = (batch.channels, batch.time_steps);
    plan.iter()
        .map(|r| {
            let tmpl = &batch.trials[r.template];
            let mut samples = alloc::vec![0.0f32; c * t];
            for (range, &d) in bounds.iter().zip(&r.donors) {
                let src = &batch.trials[d].samples;
                for ch in 0..c {
                    let row = ch * t;
                    samples[row + range.start..row + range.end].copy_from_slice(&src[row + range.start..row + range.end]);
                }
            }
            EegTrial { samples, label: tmpl.label, subject_id: tmpl.subject_id, session_id: tmpl.session_id }
        })
        .collect()
}

/// Returns the batch followed by one synthetic trial per original trial;
/// the identity when disabled.
pub fn sr_augment<R: Rng + ?Sized>(batch: &TrialSet, cfg: &SrConfig, rng: &mut R) -> Result<TrialSet> {
    if !cfg.enabled {
        return Ok(batch.clone());
    }
    let bounds = segment_bounds(batch.time_steps, cfg.segments)?;
    let plan = sr_plan(&batch.labels(), cfg.segments, rng);
    let mut out = batch.clone();
    out.trials.extend(materialize(batch, &plan, &bounds));
    Ok(out)
}
