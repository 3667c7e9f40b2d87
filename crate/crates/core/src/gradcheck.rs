//! Finite-difference verification of reverse-mode gradients.
//!
//! Central differences with step `h` are compared against the tape's
//! gradients. The per-coordinate error is `|analytic - numeric| /
//! max(|analytic|, |numeric|, floor)`; `floor` keeps coordinates whose true
//! gradient is zero from dividing rounding noise by zero.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub floor: f64,
    /// Check at most this many coordinates per input (sampled with `seed`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-4, floor: 1e-6, max_coords: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub name: String,
    pub checked: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() <= tolerance
    }
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::Dimension(alloc::format!("loss must be a scalar, got shape {:?}", t.shape())));
    }
    let x = t.data()[0];
    if !x.is_finite() {
        return Err(Error::Numerical(String::from("non-finite loss during gradient check")));
    }
    Ok(x)
}

fn coords(len: usize, opts: &GradCheckOptions, salt: usize) -> Vec<usize> {
    match opts.max_coords {
        Some(k) if k < len => {
            let mut r = rng::stream(opts.seed ^ salt as u64, "gradcheck");
            let mut idx = sample(&mut r, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

fn compare(name: String, analytic: &[f64], numeric: &[(usize, f64)], floor: f64) -> Result<InputReport> {
    let mut report = InputReport { name, checked: numeric.len(), max_abs_error: 0.0, max_rel_error: 0.0 };
    for &(i, n) in numeric {
        let a = analytic[i];
        if !a.is_finite() || !n.is_finite() {
            return Err(Error::Numerical(alloc::format!("non-finite gradient for {} at {}", report.name, i)));
        }
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(floor);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_rel_error = report.max_rel_error.max(rel);
    }
    Ok(report)
}

/// Checks the gradient of `f` with respect to each of `inputs`.
///
/// `f` records its computation on a fresh tape from the given input handles
/// and returns a one-element loss. It is called once for the analytic pass
/// and twice per checked coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        scalar_of(&tape, loss)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    scalar_of(&tape, loss)?;
    let grads = tape.backward(loss)?;

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; inputs[k].len()]);
        let mut numeric = Vec::new();
        for i in coords(inputs[k].len(), &opts, k) {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + opts.step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - opts.step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric.push((i, (plus - minus) / (2.0 * opts.step)));
        }
        reports.push(compare(alloc::format!("input{k}"), &analytic, &numeric, opts.floor)?);
    }
    Ok(GradCheckReport { inputs: reports })
}

/// Checks parameter gradients of a loss built from `store`, one report per
/// trainable parameter.
pub fn grad_check_params<F>(store: &mut ParamStore<f64>, f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    scalar_of(&tape, loss)?;
    tape.backward(loss)?.accumulate_into(store)?;

    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut reports = Vec::with_capacity(ids.len());
    for (k, id) in ids.into_iter().enumerate() {
        let analytic = store.get(id).tensor.grad().map(<[f64]>::to_vec).unwrap_or_default();
        let mut numeric = Vec::new();
        for i in coords(analytic.len(), &opts, k) {
            let orig = store.get(id).tensor.data()[i];
            store.get_mut(id).tensor.data_mut()[i] = orig + opts.step;
            let mut t = Tape::new();
            let l = f(&mut t, store)?;
            let plus = scalar_of(&t, l)?;
            store.get_mut(id).tensor.data_mut()[i] = orig - opts.step;
            let mut t = Tape::new();
            let l = f(&mut t, store)?;
            let minus = scalar_of(&t, l)?;
            store.get_mut(id).tensor.data_mut()[i] = orig;
            numeric.push((i, (plus - minus) / (2.0 * opts.step)));
        }
        let name = store.get(id).name.clone();
        reports.push(compare(name, &analytic, &numeric, opts.floor)?);
    }
    store.zero_grad();
    Ok(GradCheckReport { inputs: reports })
}
