//! Privacy-preserving discriminative training.
//!
//! One private step: per-example gradients clipped to `C`, summed, noised
//! with stddev `C·sigma` per coordinate, normalized by the expected Poisson
//! batch size `q·n`, then handed to the optimizer. The accountant observes
//! each accounted iteration through `m` freshly sampled per-example clipped
//! gradient norms; those samples never enter any released output.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::accountant::{
    AccountantConfig, AccountantError, Fix, GradientNormSample, PrivacyGuarantee, PrivacyLedger,
    Track,
};
use crate::data::{DataError, Dataset};
use crate::mechanisms::{clip_in_place, noised_sum, MechanismError, MechanismParams};
use crate::nn::{
    batch_gradient, for_each_example_gradient, optimizer_step, Activation, LossTag, Network,
    NnError, OptimizerConfig, OptimizerState,
};
use crate::rng::Streams;
use crate::tensor::{l2_norm, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dataset has no labels")]
    MissingLabels,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("training config disagrees with accountant config: {0}")]
    ConfigMismatch(&'static str),
}

/// Result of one (possibly skipped) private step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub skipped: bool,
    pub realized_batch: usize,
    pub mean_loss: f64,
    /// Largest post-clip per-example contribution norm; never exceeds the
    /// clip bound.
    pub max_contribution_norm: f64,
}

/// Per-step record passed to training observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub realized_batch: usize,
    pub mean_loss: f64,
    pub max_contribution_norm: f64,
    pub bdp_epsilon: Option<f64>,
    pub worst_case_epsilon: Option<f64>,
}

pub(crate) fn gather_rows(features: &Tensor, indices: &[usize]) -> Tensor {
    let (_, d) = features.as_matrix();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        data.extend_from_slice(features.row(i));
    }
    Tensor::new(vec![indices.len(), d], data).expect("rows are finite")
}

pub(crate) fn gather_labels(labels: &Tensor, loss: LossTag, indices: &[usize]) -> Tensor {
    match loss {
        LossTag::SoftmaxCrossEntropy => {
            let data: Vec<f64> = indices.iter().map(|&i| labels.data()[i]).collect();
            Tensor::new(vec![indices.len()], data).expect("labels are finite")
        }
        LossTag::Mse => gather_rows(labels, indices),
        _ => Tensor::empty(),
    }
}

/// Poisson subsampling: each index enters independently with probability `q`.
pub fn poisson_batch<R: Rng>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    let mut batch = Vec::new();
    for i in 0..n {
        if rng.random::<f64>() < q {
            batch.push(i);
        }
    }
    batch
}

/// One private update: clip each per-example gradient to `C`, sum, add
/// `N(0, (C·sigma)²)` noise per coordinate, divide by the expected batch
/// size, and step the optimizer.
///
/// An empty batch performs no update and reports `skipped` so the caller
/// can leave the ledger untouched.
#[allow(clippy::too_many_arguments)]
pub fn private_step(
    net: &mut Network,
    features: &Tensor,
    labels: &Tensor,
    batch_indices: &[usize],
    loss: LossTag,
    mech: &MechanismParams,
    expected_batch: f64,
    optimizer: &OptimizerConfig,
    opt_state: &mut OptimizerState,
    noise_rng: &mut ChaCha20Rng,
) -> Result<StepOutcome, TrainError> {
    if !(expected_batch > 0.0) {
        return Err(TrainError::InvalidConfig(
            "expected batch size must be positive",
        ));
    }
    if batch_indices.is_empty() {
        return Ok(StepOutcome {
            skipped: true,
            realized_batch: 0,
            mean_loss: 0.0,
            max_contribution_norm: 0.0,
        });
    }
    let batch = gather_rows(features, batch_indices);
    let batch_labels = gather_labels(labels, loss, batch_indices);
    let mut sum = vec![0.0; net.param_count()];
    let mut clipped = vec![0.0; net.param_count()];
    let mut loss_sum = 0.0;
    let mut max_norm = 0.0f64;
    for_each_example_gradient(net, &batch, &batch_labels, loss, |_, lv, g| {
        loss_sum += lv;
        clipped.copy_from_slice(g);
        clip_in_place(&mut clipped, mech.clip_norm);
        let norm = l2_norm(&clipped);
        max_norm = max_norm.max(norm);
        for (s, c) in sum.iter_mut().zip(clipped.iter()) {
            *s += c;
        }
    })?;
    debug_assert!(max_norm <= mech.clip_norm);
    let mut noised = noised_sum(sum, mech, noise_rng);
    for x in noised.iter_mut() {
        *x /= expected_batch;
    }
    let grad = Tensor::new(vec![noised.len()], noised)?;
    optimizer_step(net, &grad, optimizer, opt_state)?;
    Ok(StepOutcome {
        skipped: false,
        realized_batch: batch_indices.len(),
        mean_loss: loss_sum / batch_indices.len() as f64,
        max_contribution_norm: max_norm,
    })
}

/// Draw `m` points uniformly with replacement and record their clipped
/// per-example gradient norms at the current parameters.
#[allow(clippy::too_many_arguments)]
pub fn sample_gradient_norms<R: Rng>(
    net: &Network,
    features: &Tensor,
    labels: &Tensor,
    loss: LossTag,
    clip_norm: f64,
    m: usize,
    iteration: u64,
    rng: &mut R,
) -> Result<GradientNormSample, TrainError> {
    let n = features.num_rows();
    let indices: Vec<usize> = (0..m)
        .map(|_| (rng.random::<u64>() % n as u64) as usize)
        .collect();
    let batch = gather_rows(features, &indices);
    let batch_labels = gather_labels(labels, loss, &indices);
    let mut norms = Vec::with_capacity(m);
    for_each_example_gradient(net, &batch, &batch_labels, loss, |_, _, g| {
        norms.push(l2_norm(g).min(clip_norm));
    })?;
    Ok(GradientNormSample { norms, iteration })
}

/// Configuration of a private training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    /// Poisson inclusion probability per point.
    pub q: f64,
    pub mech: MechanismParams,
    pub optimizer: OptimizerConfig,
    /// `None` disables accounting (non-private mode).
    pub accountant: Option<AccountantConfig>,
    /// The delta at which ceilings and reports fix the guarantee.
    pub guarantee_delta: f64,
    /// Stop before the Bayesian epsilon at `guarantee_delta` would exceed
    /// this value.
    pub epsilon_ceiling: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 {
            return Err(TrainError::InvalidConfig("step budget must be positive"));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(TrainError::InvalidConfig("q must lie in (0, 1]"));
        }
        if !(self.guarantee_delta > 0.0 && self.guarantee_delta < 1.0) {
            return Err(TrainError::InvalidConfig(
                "guarantee delta must lie in (0, 1)",
            ));
        }
        if let Some(acct) = &self.accountant {
            if acct.q != self.q {
                return Err(TrainError::ConfigMismatch("q"));
            }
            if acct.sigma != self.mech.noise_multiplier {
                return Err(TrainError::ConfigMismatch("noise multiplier"));
            }
            if acct.clip_norm != self.mech.clip_norm {
                return Err(TrainError::ConfigMismatch("clip norm"));
            }
        }
        Ok(())
    }
}

/// A finished (or ceiling-stopped) private classifier run.
#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub net: Network,
    pub ledger: Option<PrivacyLedger>,
    pub norm_log: Vec<GradientNormSample>,
    pub bdp: Option<PrivacyGuarantee>,
    pub worst_case: Option<PrivacyGuarantee>,
    /// True when training stopped early on the epsilon ceiling.
    pub partial: bool,
    pub steps_run: u64,
}

/// Train a softmax classifier under the private step, accounting every
/// non-empty iteration on both tracks.
///
/// Stops early when the next accounted iteration would push the Bayesian
/// epsilon past the ceiling, so the reported guarantee never exceeds it.
pub fn train_private_classifier(
    train: &Dataset,
    hidden: &[usize],
    config: &TrainConfig,
    mut observer: Option<&mut dyn FnMut(&StepRecord)>,
) -> Result<ClassifierRun, TrainError> {
    config.validate()?;
    let labels = train.label_tensor().ok_or(TrainError::MissingLabels)?;
    let features = train.features();
    let n = train.len();
    let streams = Streams::new(config.seed);
    let mut dims = vec![train.feature_dim()];
    dims.extend_from_slice(hidden);
    dims.push(train.num_classes());
    let mut net = Network::random(
        &dims,
        Activation::Selu,
        Activation::Identity,
        &mut streams.stream("classifier-init"),
    )?;
    let mut batch_rng = streams.stream("poisson");
    let mut noise_rng = streams.stream("noise");
    let mut norm_rng = streams.stream("norm-sample");
    let mut opt_state = OptimizerState::default();
    let mut ledger = match &config.accountant {
        Some(acct) => Some(PrivacyLedger::new(acct.clone())?),
        None => None,
    };
    let mut norm_log = Vec::new();
    let mut partial = false;
    let mut steps_run = 0;
    let expected_batch = config.q * n as f64;
    let loss = LossTag::SoftmaxCrossEntropy;

    for step in 0..config.steps {
        let batch = poisson_batch(n, config.q, &mut batch_rng);
        if batch.is_empty() {
            continue;
        }
        if let Some(ledger_ref) = ledger.as_mut() {
            let sample = sample_gradient_norms(
                &net,
                &features,
                &labels,
                loss,
                config.mech.clip_norm,
                ledger_ref.config().m,
                ledger_ref.iterations(),
                &mut norm_rng,
            )?;
            let mut tentative = ledger_ref.clone();
            tentative.record(&sample)?;
            if let Some(ceiling) = config.epsilon_ceiling {
                let eps = tentative
                    .guarantee(Fix::Delta(config.guarantee_delta), Track::Bdp)?
                    .epsilon;
                if eps > ceiling {
                    partial = true;
                    break;
                }
            }
            *ledger_ref = tentative;
            norm_log.push(sample);
        }
        let outcome = private_step(
            &mut net,
            &features,
            &labels,
            &batch,
            loss,
            &config.mech,
            expected_batch,
            &config.optimizer,
            &mut opt_state,
            &mut noise_rng,
        )?;
        steps_run = step + 1;
        if let Some(observer) = observer.as_mut() {
            let (bdp_epsilon, worst_case_epsilon) = match &ledger {
                Some(l) => (
                    Some(
                        l.guarantee(Fix::Delta(config.guarantee_delta), Track::Bdp)?
                            .epsilon,
                    ),
                    Some(
                        l.guarantee(Fix::Delta(config.guarantee_delta), Track::WorstCase)?
                            .epsilon,
                    ),
                ),
                None => (None, None),
            };
            observer(&StepRecord {
                step,
                realized_batch: outcome.realized_batch,
                mean_loss: outcome.mean_loss,
                max_contribution_norm: outcome.max_contribution_norm,
                bdp_epsilon,
                worst_case_epsilon,
            });
        }
    }

    let (bdp, worst_case) = match &ledger {
        Some(l) => (
            Some(l.guarantee(Fix::Delta(config.guarantee_delta), Track::Bdp)?),
            Some(l.guarantee(Fix::Delta(config.guarantee_delta), Track::WorstCase)?),
        ),
        None => (None, None),
    };
    Ok(ClassifierRun {
        net,
        ledger,
        norm_log,
        bdp,
        worst_case,
        partial,
        steps_run,
    })
}

/// Plain (non-private) minibatch training; used for students and the
/// rotation detector. Batches are drawn uniformly with replacement.
#[allow(clippy::too_many_arguments)]
pub fn fit_plain(
    net: &mut Network,
    features: &Tensor,
    labels: &Tensor,
    loss: LossTag,
    optimizer: &OptimizerConfig,
    steps: u64,
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Result<f64, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch size must be positive"));
    }
    let n = features.num_rows();
    let mut opt_state = OptimizerState::default();
    let mut last_loss = 0.0;
    for _ in 0..steps {
        let indices: Vec<usize> = (0..batch_size)
            .map(|_| (rng.random::<u64>() % n as u64) as usize)
            .collect();
        let batch = gather_rows(features, &indices);
        let batch_labels = gather_labels(labels, loss, &indices);
        let (grad, mean_loss) = batch_gradient(net, &batch, &batch_labels, loss)?;
        optimizer_step(net, &grad, optimizer, &mut opt_state)?;
        last_loss = mean_loss;
    }
    Ok(last_loss)
}

/// Argmax class predictions for a feature matrix.
pub fn predict_classes(net: &Network, features: &Tensor) -> Result<Vec<u8>, TrainError> {
    let out = net.forward(features)?;
    let (n, k) = out.as_matrix();
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let row = out.row(i);
        let mut best = 0usize;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        classes.push(best as u8);
    }
    Ok(classes)
}

/// Fraction of test examples whose argmax prediction matches the label.
pub fn evaluate(net: &Network, test: &Dataset) -> Result<f64, TrainError> {
    let labels = test.labels().ok_or(TrainError::MissingLabels)?;
    let predicted = predict_classes(net, &test.features())?;
    let correct = predicted
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
