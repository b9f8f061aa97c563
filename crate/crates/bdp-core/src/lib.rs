//! Core kernels for training generative and discriminative models under
//! Bayesian differential privacy.
//!
//! The crate is split along the lifecycle of a private training run:
//!
//! - [`tensor`] / [`nn`]: a minimal dense network kernel with exact
//!   per-example backpropagation (64-bit everywhere).
//! - [`mechanisms`]: norm clipping, Gaussian noising, and noise calibration.
//! - [`accountant`]: the dual privacy accountant — a Bayesian track estimated
//!   from sampled gradient norms and a worst-case track evaluated at the
//!   clipping bound — with moment composition and percentile conversion.
//! - [`data`]: in-memory datasets, toy generators, and corruption transforms.
//! - [`dpsgd`]: clip → sum → noise → step training for classifiers.
//! - [`gan`]: weight-clipped Wasserstein GAN with the mechanism applied to
//!   real-batch critic updates only.
//!
//! Everything here is deterministic given a master seed: randomness flows
//! through named [`rng`] streams so experiments can be replayed and audited.
//!
//! The crate is `no_std`-compatible (with `alloc`); file formats, IO and the
//! command-line pipeline live in the companion `bdp-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod accountant;
pub mod data;
pub mod dpsgd;
pub mod gan;
pub mod mechanisms;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use accountant::{
    binomial_moment, cost_from_samples, markov_percentile, worst_case_cost, AccountantConfig,
    AccountantError, Fix, GradientNormSample, PercentileBound, PrivacyGuarantee, PrivacyLedger,
    Side, Track,
};
pub use data::{corrupt, split, toy_ring, CorruptionKind, CorruptionSpec, DataError, Dataset};
pub use dpsgd::{
    evaluate, private_step, train_private_classifier, ClassifierRun, StepRecord, TrainConfig,
    TrainError,
};
pub use gan::{
    generate, mode_coverage, rotation_statistic, train_wgan, DataMode, GanConfig, GanError,
    GanRun, SyntheticBatch,
};
pub use mechanisms::{
    calibrate_sigma, clip_to_norm, gaussian_mechanism, privacy_loss, Calibration, MechanismError,
    MechanismParams,
};
pub use nn::{
    optimizer_step, per_example_gradients, Activation, Layer, LossTag, Network, NnError,
    OptimizerConfig, OptimizerState, UpdateRule,
};
pub use rng::Streams;
pub use tensor::Tensor;
