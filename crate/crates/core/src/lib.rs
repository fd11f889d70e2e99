//! Per-neuron relative optimisation over balanced networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`rng`] and [`autodiff`]: dense `f64` tensors, a portable
//!   seeded generator and a tape-based reverse-mode engine with
//!   finite-difference checking.
//! - [`network`]: multilayer perceptrons whose weight rows are neurons,
//!   balanced initialisation and the centred weight-normalisation
//!   reparameterisation.
//! - [`optim`]: the Nero update (per-neuron relative steps followed by
//!   projection back onto balanced neurons), the SGD, Adam, LAMB and Madam
//!   baselines, and learning-rate schedules.
//! - [`analysis`]: stability and deep-relative-trust probes, relative step
//!   sizes, neuron rotations, angular robustness estimation, spherical cap
//!   measures and the resulting PAC-Bayes bound.
//! - [`harness`]: IDX/MNIST and synthetic data, experiment configs, the
//!   training loop, ablation and learning-rate grid runners, checkpoints and
//!   metric files.
//!
//! With the default `parallel` feature, grid cells, ablation cells and
//! Monte-Carlo samples run on rayon; without it they run sequentially and
//! produce the same results.

// `!(x >= floor)` checks double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod harness;
pub mod network;
pub mod optim;
pub mod par;
pub mod rng;
pub mod tensor;

pub use rng::Rng;
pub use tensor::Tensor;
