//! Numerical core of a multi-branch convolutional EEG classifier with
//! multiscale sparse cross-attention fusion and temporal convolutional heads.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, synthetic
//! data, spectral analysis and the command line live in the companion
//! `csanet` crate.
//!
//! Layout:
//!
//! * [`tensor`], [`kernels`], [`autodiff`], [`param`], [`optim`]: dense
//!   tensors, GEMM and convolution kernels, a reverse-mode tape, named
//!   parameters and Adam.
//! * [`gradcheck`], [`checks`], [`reference`]: finite-difference checking,
//!   the named gradient-check scopes, and naive loop implementations used
//!   as test oracles.
//! * [`rng`]: named seed substreams.
//! * [`attention`]: multiscale pooled keys/values, dual top-k sparse
//!   attention and residual fusion.
//! * [`model`]: the four-branch network, fusion modes, TCN heads and the
//!   classifier.
//! * [`augment`]: segmentation-and-reconstruction batch augmentation.
//! * [`data`], [`metrics`], [`train`]: trial containers and splits,
//!   evaluation metrics, and the seeded training step.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod scalar;
pub mod tensor;
pub mod kernels;
pub mod autodiff;
pub mod param;
pub mod optim;
pub mod gradcheck;
pub mod checks;
pub mod rng;
pub mod attention;
pub mod model;
pub mod augment;
pub mod data;
pub mod metrics;
pub mod train;
pub mod reference;

pub use autodiff::{Gradients, PoolSpec, Tape, Var};
pub use error::{Error, Result};
pub use kernels::Conv2dSpec;
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;
