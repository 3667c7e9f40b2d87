//! Welch power spectral density and per-branch spectral inspection.

use csanet_core::data::EegTrial;
use csanet_core::model::CsanetModel;
use csanet_core::{Error, Result, Scalar, Tape, Tensor};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl PsdEstimate {
    /// Frequency of the largest bin.
    pub fn peak_hz(&self) -> f64 {
        let i = self.power.iter().enumerate().fold(0, |best, (i, &p)| if p > self.power[best] { i } else { best });
        self.freqs[i]
    }

    pub fn bin_width(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchParams {
    /// Samples per segment; `None` means `min(256, len)`.
    pub segment_len: Option<usize>,
    pub overlap: f64,
}

impl Default for WelchParams {
    fn default() -> Self {
        WelchParams { segment_len: None, overlap: 0.5 }
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos()).collect()
}

/// One-sided Welch estimate scaled as a density (power per Hz): segments are
/// Hann-windowed without detrending, and `|X|² / (fs · Σw²)` is averaged
/// over segments with non-DC, non-Nyquist bins doubled.
pub fn welch(signal: &[f64], fs: f64, params: WelchParams) -> Result<PsdEstimate> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Config(format!("sampling rate {fs} must be positive")));
    }
    if !(0.0..1.0).contains(&params.overlap) {
        return Err(Error::Config(format!("overlap {} outside [0, 1)", params.overlap)));
    }
    let seg = params.segment_len.unwrap_or(signal.len().min(256));
    if seg == 0 || signal.len() < seg {
        return Err(Error::Data(format!("signal of {} samples is shorter than one segment of {seg}", signal.len())));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("signal contains non-finite samples".into()));
    }
    let step = (seg - (seg as f64 * params.overlap).floor() as usize).max(1);
    let w = hann(seg);
    let scale = 1.0 / (fs * w.iter().map(|v| v * v).sum::<f64>());
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let bins = seg / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    let mut start = 0;
    while start + seg <= signal.len() {
        for (b, (x, wi)) in buf.iter_mut().zip(signal[start..start + seg].iter().zip(&w)) {
            *b = Complex::new(x * wi, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    for (k, p) in power.iter_mut().enumerate() {
        let one_sided = if k == 0 || (seg % 2 == 0 && k == seg / 2) { 1.0 } else { 2.0 };
        *p *= scale * one_sided / count as f64;
    }
    let freqs = (0..bins).map(|k| k as f64 * fs / seg as f64).collect();
    Ok(PsdEstimate { freqs, power })
}

/// CSV with one block per series: a `# name` comment line, a
/// `freq_hz,power` header, then one row per bin.
pub fn to_csv(series: &[(String, PsdEstimate)]) -> String {
    let mut out = String::new();
    for (name, est) in series {
        out.push_str(&format!("# {name}\nfreq_hz,power\n"));
        for (f, p) in est.freqs.iter().zip(&est.power) {
            out.push_str(&format!("{f},{p}\n"));
        }
    }
    out
}

/// Spectra of one trial before and after a branch's temporal convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPsd {
    /// PSD of the channel-averaged raw trial.
    pub before: PsdEstimate,
    /// PSD of each temporal filter's output, averaged over channels.
    pub after: Vec<PsdEstimate>,
}

impl BranchPsd {
    pub fn series(&self) -> Vec<(String, PsdEstimate)> {
        let mut s = vec![("input".to_owned(), self.before.clone())];
        s.extend(self.after.iter().enumerate().map(|(f, p)| (format!("filter{}", f + 1), p.clone())));
        s
    }
}

fn channel_mean(data: &[f64], channels: usize, len: usize) -> Vec<f64> {
    (0..len).map(|n| (0..channels).map(|c| data[c * len + n]).sum::<f64>() / channels as f64).collect()
}

/// Spectral view of `branch` (0-based) on one trial.
pub fn branch_psd_report<T: Scalar>(
    model: &CsanetModel<T>,
    trial: &EegTrial,
    branch: usize,
    fs: f64,
    params: WelchParams,
) -> Result<BranchPsd> {
    let cfg = model.config();
    let (c, t) = (cfg.channels, cfg.time_steps);
    if trial.samples.len() != c * t {
        return Err(Error::Dimension(format!("trial has {} samples, model expects {c}x{t}", trial.samples.len())));
    }
    let raw: Vec<f64> = trial.samples.iter().map(|&v| f64::from(v)).collect();
    let before = welch(&channel_mean(&raw, c, t), fs, params)?;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 1, c, t], raw.iter().map(|&v| T::from_f64_lossy(v)).collect())?);
    let h = model.temporal_features(&mut tape, x, branch)?;
    let out: Vec<f64> = tape.value(h).data().iter().map(|v| v.to_f64_lossy()).collect();
    let filters = tape.shape(h)[1];
    let after = out
        .chunks(c * t)
        .take(filters)
        .map(|fmap| welch(&channel_mean(fmap, c, t), fs, params))
        .collect::<Result<_>>()?;
    Ok(BranchPsd { before, after })
}
