//! File formats, synthetic data, spectral analysis and the training harness
//! around [`csanet_core`].
//!
//! * [`eegd`] and [`checkpoint`]: the binary trial container and model
//!   checkpoints.
//! * [`config`]: flat `key=value` run configuration.
//! * [`synth`]: seeded synthetic multi-class EEG.
//! * [`psd`]: Welch spectra and per-branch spectral inspection.
//! * [`report`]: evaluation reports as CSV and JSON.
//! * [`harness`]: end-to-end training and evaluation runs.
//! * [`commands`]: the `csanet` command line.

mod bytes;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod eegd;
pub mod error;
pub mod harness;
pub mod psd;
pub mod report;
pub mod synth;

pub use bytes::write_atomic;
pub use error::{Error, Result};
