//! Synthetic band-limited EEG with class-specific rhythms.
//!
//! Class `k` carries a unit-amplitude sinusoid at [`CLASS_FREQS_HZ`]`[k]`
//! (random phase per trial) on the channels `ch` with `ch % L == k`, or on
//! channel `k % C` when there are fewer channels than classes. Every channel
//! gets white Gaussian noise whose power is the sinusoid power (1/2) divided
//! by the requested SNR; an infinite SNR gives noiseless trials.

use csanet_core::data::{EegTrial, TrialSet};
use csanet_core::{rng, Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const CLASS_FREQS_HZ: [f64; 4] = [6.0, 10.0, 20.0, 35.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub per_class: usize,
    pub channels: usize,
    pub time_steps: usize,
    pub classes: usize,
    /// Linear signal-to-noise power ratio.
    pub snr: f64,
    pub fs: f64,
    pub subjects: u32,
    pub sessions: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(per_class: usize, channels: usize, time_steps: usize, classes: usize, snr: f64, seed: u64) -> Self {
        SynthSpec { per_class, channels, time_steps, classes, snr, fs: 250.0, subjects: 1, sessions: 1, seed }
    }

    /// Whether class `k`'s rhythm appears on channel `ch`.
    pub fn active(&self, k: usize, ch: usize) -> bool {
        if self.channels >= self.classes {
            ch % self.classes == k
        } else {
            ch == k % self.channels
        }
    }
}

/// Generates `per_class · L` trials, classes interleaved. Subjects cycle
/// fastest over class groups, then sessions.
pub fn generate(spec: &SynthSpec) -> Result<TrialSet> {
    let SynthSpec { per_class, channels: c, time_steps: t, classes: l, snr, fs, subjects, sessions, seed } = *spec;
    if c == 0 || t == 0 {
        return Err(Error::Config(format!("channels {c} and time steps {t} must be positive")));
    }
    if l == 0 || l > CLASS_FREQS_HZ.len() {
        return Err(Error::Config(format!("{l} classes; between 1 and {} are supported", CLASS_FREQS_HZ.len())));
    }
    if snr.is_nan() || snr <= 0.0 || !(fs > 0.0 && fs.is_finite()) || subjects == 0 || sessions == 0 {
        return Err(Error::Config(format!(
            "need snr > 0, finite fs > 0 and positive subject/session counts (snr {snr}, fs {fs})"
        )));
    }
    let noise_std = (0.5 / snr).sqrt();
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut r = rng::stream(seed, "synth");
    let mut set = TrialSet::new(c, t, l);
    for i in 0..per_class * l {
        let k = i % l;
        let group = (i / l) as u32;
        let phase = r.random_range(0.0..std::f64::consts::TAU);
        let w = std::f64::consts::TAU * CLASS_FREQS_HZ[k] / fs;
        let mut samples = Vec::with_capacity(c * t);
        for ch in 0..c {
            let on = spec.active(k, ch);
            for n in 0..t {
                let s = if on { (w * n as f64 + phase).sin() } else { 0.0 };
                let e = if noise_std > 0.0 { noise.sample(&mut r) } else { 0.0 };
                samples.push((s + e) as f32);
            }
        }
        set.push(EegTrial {
            samples,
            label: k,
            subject_id: 1 + group % subjects,
            session_id: 1 + (group / subjects) % sessions,
        })?;
    }
    Ok(set)
}
