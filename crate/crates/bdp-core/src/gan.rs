//! Weight-clipped Wasserstein GAN with the privacy mechanism on real-batch
//! critic updates only.
//!
//! Each generator step runs `critic_steps` critic iterations, each split
//! into two half-steps: the real half goes through the private
//! clip → sum → noise pipeline and is accounted on both ledger tracks; the
//! fake half uses the raw mean gradient and is never accounted (generated
//! samples carry no fresh information about the data). The generator update
//! backpropagates through the frozen critic and is covered by
//! post-processing, so the ledger is independent of how many generator
//! updates run.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::accountant::{AccountantConfig, Fix, PrivacyGuarantee, PrivacyLedger, Track};
use crate::data::{Dataset, DatasetKind};
use crate::dpsgd::{poisson_batch, private_step, sample_gradient_norms, StepOutcome, TrainError};
use crate::mechanisms::{clip_in_place, MechanismParams};
use crate::nn::{
    batch_gradient, for_each_example_gradient, optimizer_step, Activation, LossTag, Network,
    NnError, OptimizerConfig, OptimizerState,
};
use crate::rng::{fnv1a64, Streams};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GanError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("critic diverged (non-finite loss) at generator step {step}")]
    Diverged { step: u64, snapshot: Box<GanSnapshot> },
    #[error("expected 2-d samples, got width {0}")]
    NotPlanar(usize),
    #[error("invalid gan config: {0}")]
    InvalidConfig(&'static str),
}

/// Parameter state captured when training aborts, so callers can persist a
/// checkpoint for post-mortem inspection.
#[derive(Debug, Clone)]
pub struct GanSnapshot {
    pub generator: Network,
    pub critic: Network,
}

/// How generator outputs map to data space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    /// Images in `[0, 1]`: tanh generator output, critic sees `2x − 1`,
    /// exported samples squashed by `(tanh + 1)/2`.
    UnitImage,
    /// Raw features (toy 2-d data): identity generator output.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub critic_steps: u32,
    pub weight_clip: f64,
    pub gen_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Poisson rate for real batches.
    pub q: f64,
    pub mech: MechanismParams,
    pub accountant: Option<AccountantConfig>,
    pub generator_steps: u64,
    pub optimizer: OptimizerConfig,
    pub data_mode: DataMode,
    /// Optional per-example clip bound for generator gradients (never
    /// noised, never accounted; a training-balance knob).
    pub generator_clip: Option<f64>,
    pub guarantee_delta: f64,
    pub epsilon_ceiling: Option<f64>,
    pub seed: u64,
}

impl GanConfig {
    pub fn new(q: f64, mech: MechanismParams, generator_steps: u64, seed: u64) -> Self {
        Self {
            latent_dim: 64,
            critic_steps: 5,
            weight_clip: 0.01,
            gen_hidden: vec![256, 256],
            critic_hidden: vec![128, 64],
            q,
            mech,
            accountant: None,
            generator_steps,
            optimizer: OptimizerConfig::rmsprop(5e-5),
            data_mode: DataMode::UnitImage,
            generator_clip: None,
            guarantee_delta: 1e-10,
            epsilon_ceiling: None,
            seed,
        }
    }

    fn validate(&self) -> Result<(), GanError> {
        if self.critic_steps == 0 {
            return Err(GanError::InvalidConfig("critic_steps must be >= 1"));
        }
        if !(self.weight_clip > 0.0) {
            return Err(GanError::InvalidConfig("weight_clip must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(GanError::InvalidConfig("latent_dim must be positive"));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(GanError::InvalidConfig("q must lie in (0, 1]"));
        }
        if self.generator_steps == 0 {
            return Err(GanError::InvalidConfig("generator_steps must be positive"));
        }
        if let Some(acct) = &self.accountant {
            if acct.q != self.q
                || acct.sigma != self.mech.noise_multiplier
                || acct.clip_norm != self.mech.clip_norm
            {
                return Err(GanError::InvalidConfig(
                    "accountant must match q, sigma and clip norm",
                ));
            }
        }
        Ok(())
    }
}

/// Per-generator-step record for observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanStepRecord {
    pub generator_step: u64,
    pub critic_loss_real: f64,
    pub critic_loss_fake: f64,
    pub generator_loss: f64,
    pub accounted_iterations: u64,
    pub bdp_epsilon: Option<f64>,
    pub worst_case_epsilon: Option<f64>,
}

/// A finished (or ceiling-stopped) WGAN training run.
#[derive(Debug, Clone)]
pub struct GanRun {
    pub generator: Network,
    pub critic: Network,
    pub ledger: Option<PrivacyLedger>,
    pub norm_log: Vec<crate::accountant::GradientNormSample>,
    pub bdp: Option<PrivacyGuarantee>,
    pub worst_case: Option<PrivacyGuarantee>,
    pub partial: bool,
    pub generator_steps_run: u64,
}

fn draw_latents(n: usize, dim: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        data.push(z);
    }
    Tensor::new(vec![n, dim], data).expect("latents are finite")
}

fn diverged(err: TrainError) -> bool {
    matches!(
        err,
        TrainError::Nn(NnError::NonFiniteLoss { .. })
            | TrainError::Nn(NnError::Tensor(crate::tensor::TensorError::NonFinite { .. }))
            | TrainError::Tensor(crate::tensor::TensorError::NonFinite { .. })
    )
}

/// Train a weight-clipped WGAN on `real`. Only real critic half-updates are
/// noised and accounted; the ledger grows by exactly one iteration per
/// non-empty real half-step.
pub fn train_wgan(
    real: &Dataset,
    config: &GanConfig,
    mut observer: Option<&mut dyn FnMut(&GanStepRecord)>,
) -> Result<GanRun, GanError> {
    config.validate()?;
    if config.data_mode == DataMode::UnitImage && real.kind() != DatasetKind::Image {
        return Err(GanError::InvalidConfig("image mode requires image data"));
    }
    let d = real.feature_dim();
    let n = real.len();
    let mut features = real.features();
    if config.data_mode == DataMode::UnitImage {
        // Critic space is [-1, 1].
        for x in features.data_mut() {
            *x = 2.0 * *x - 1.0;
        }
    }
    let streams = Streams::new(config.seed);
    let mut critic_dims = vec![d];
    critic_dims.extend_from_slice(&config.critic_hidden);
    critic_dims.push(1);
    let mut critic = Network::random(
        &critic_dims,
        Activation::Selu,
        Activation::Identity,
        &mut streams.stream("gan-critic-init"),
    )
    .map_err(TrainError::from)?;
    critic.clamp_params(config.weight_clip);
    let mut gen_dims = vec![config.latent_dim];
    gen_dims.extend_from_slice(&config.gen_hidden);
    gen_dims.push(d);
    let gen_output = match config.data_mode {
        DataMode::UnitImage => Activation::Tanh,
        DataMode::Raw => Activation::Identity,
    };
    let mut generator = Network::random(
        &gen_dims,
        Activation::Selu,
        gen_output,
        &mut streams.stream("gan-generator-init"),
    )
    .map_err(TrainError::from)?;

    let mut batch_rng = streams.stream("gan-poisson");
    let mut noise_rng = streams.stream("gan-noise");
    let mut norm_rng = streams.stream("gan-norms");
    let mut latent_rng = streams.stream("gan-latent");
    let mut critic_state = OptimizerState::default();
    let mut fake_state = OptimizerState::default();
    let mut gen_state = OptimizerState::default();
    let mut ledger = match &config.accountant {
        Some(acct) => Some(PrivacyLedger::new(acct.clone()).map_err(TrainError::from)?),
        None => None,
    };
    let mut norm_log = Vec::new();
    let mut partial = false;
    let mut steps_run = 0;
    let expected_batch = config.q * n as f64;
    let fake_batch = (expected_batch.round() as usize).max(1);
    let empty = Tensor::empty();
    let gen_params = generator.param_count();

    let snapshot = |generator: &Network, critic: &Network| {
        Box::new(GanSnapshot {
            generator: generator.clone(),
            critic: critic.clone(),
        })
    };

    'outer: for step in 0..config.generator_steps {
        let mut real_loss = 0.0;
        let mut fake_loss = 0.0;
        for _ in 0..config.critic_steps {
            // Real half: private, accounted.
            let batch = poisson_batch(n, config.q, &mut batch_rng);
            if !batch.is_empty() {
                if let Some(ledger_ref) = ledger.as_mut() {
                    let sample = sample_gradient_norms(
                        &critic,
                        &features,
                        &empty,
                        LossTag::WassersteinCriticReal,
                        config.mech.clip_norm,
                        ledger_ref.config().m,
                        ledger_ref.iterations(),
                        &mut norm_rng,
                    )?;
                    let mut tentative = ledger_ref.clone();
                    tentative.record(&sample).map_err(TrainError::from)?;
                    if let Some(ceiling) = config.epsilon_ceiling {
                        let eps = tentative
                            .guarantee(Fix::Delta(config.guarantee_delta), Track::Bdp)
                            .map_err(TrainError::from)?
                            .epsilon;
                        if eps > ceiling {
                            partial = true;
                            break 'outer;
                        }
                    }
                    *ledger_ref = tentative;
                    norm_log.push(sample);
                }
                let outcome: StepOutcome = match private_step(
                    &mut critic,
                    &features,
                    &empty,
                    &batch,
                    LossTag::WassersteinCriticReal,
                    &config.mech,
                    expected_batch,
                    &config.optimizer,
                    &mut critic_state,
                    &mut noise_rng,
                ) {
                    Ok(outcome) => outcome,
                    Err(err) if diverged(err.clone()) => {
                        return Err(GanError::Diverged {
                            step,
                            snapshot: snapshot(&generator, &critic),
                        })
                    }
                    Err(err) => return Err(err.into()),
                };
                critic.clamp_params(config.weight_clip);
                real_loss = outcome.mean_loss;
            }

            // Fake half: raw mean gradient, never accounted.
            let latents = draw_latents(fake_batch, config.latent_dim, &mut latent_rng);
            let fake = generator.forward(&latents).map_err(TrainError::from)?;
            let (grad, loss) =
                match batch_gradient(&critic, &fake, &empty, LossTag::WassersteinCriticFake) {
                    Ok(v) => v,
                    Err(NnError::NonFiniteLoss { .. }) => {
                        return Err(GanError::Diverged {
                            step,
                            snapshot: snapshot(&generator, &critic),
                        })
                    }
                    Err(err) => return Err(TrainError::from(err).into()),
                };
            if !loss.is_finite() {
                return Err(GanError::Diverged {
                    step,
                    snapshot: snapshot(&generator, &critic),
                });
            }
            optimizer_step(&mut critic, &grad, &config.optimizer, &mut fake_state)
                .map_err(TrainError::from)?;
            critic.clamp_params(config.weight_clip);
            fake_loss = loss;
        }

        // Generator step through the frozen critic (post-processing).
        let latents = draw_latents(fake_batch, config.latent_dim, &mut latent_rng);
        let composite = generator.stacked(&critic).map_err(TrainError::from)?;
        let gen_grad: Vec<f64>;
        let gen_loss: f64;
        if let Some(clip) = config.generator_clip {
            let mut sum = vec![0.0; gen_params];
            let mut buf = vec![0.0; gen_params];
            let mut loss_sum = 0.0;
            let result = for_each_example_gradient(
                &composite,
                &latents,
                &empty,
                LossTag::WassersteinGenerator,
                |_, lv, g| {
                    loss_sum += lv;
                    buf.copy_from_slice(&g[..gen_params]);
                    clip_in_place(&mut buf, clip);
                    for (s, c) in sum.iter_mut().zip(buf.iter()) {
                        *s += c;
                    }
                },
            );
            if let Err(err) = result {
                if matches!(err, NnError::NonFiniteLoss { .. }) {
                    return Err(GanError::Diverged {
                        step,
                        snapshot: snapshot(&generator, &critic),
                    });
                }
                return Err(TrainError::from(err).into());
            }
            for s in sum.iter_mut() {
                *s /= fake_batch as f64;
            }
            gen_grad = sum;
            gen_loss = loss_sum / fake_batch as f64;
        } else {
            let (full, loss) =
                match batch_gradient(&composite, &latents, &empty, LossTag::WassersteinGenerator) {
                    Ok(v) => v,
                    Err(NnError::NonFiniteLoss { .. }) => {
                        return Err(GanError::Diverged {
                            step,
                            snapshot: snapshot(&generator, &critic),
                        })
                    }
                    Err(err) => return Err(TrainError::from(err).into()),
                };
            gen_grad = full.data()[..gen_params].to_vec();
            gen_loss = loss;
        }
        let grad = Tensor::new(vec![gen_params], gen_grad).map_err(TrainError::from)?;
        optimizer_step(&mut generator, &grad, &config.optimizer, &mut gen_state)
            .map_err(TrainError::from)?;
        steps_run = step + 1;

        if let Some(observer) = observer.as_mut() {
            let (bdp_epsilon, worst_case_epsilon) = match &ledger {
                Some(l) => (
                    Some(
                        l.guarantee(Fix::Delta(config.guarantee_delta), Track::Bdp)
                            .map_err(TrainError::from)?
                            .epsilon,
                    ),
                    Some(
                        l.guarantee(Fix::Delta(config.guarantee_delta), Track::WorstCase)
                            .map_err(TrainError::from)?
                            .epsilon,
                    ),
                ),
                None => (None, None),
            };
            observer(&GanStepRecord {
                generator_step: step,
                critic_loss_real: real_loss,
                critic_loss_fake: fake_loss,
                generator_loss: gen_loss,
                accounted_iterations: ledger.as_ref().map(|l| l.iterations()).unwrap_or(0),
                bdp_epsilon,
                worst_case_epsilon,
            });
        }
    }

    let (bdp, worst_case) = match &ledger {
        Some(l) => (
            Some(
                l.guarantee(Fix::Delta(config.guarantee_delta), Track::Bdp)
                    .map_err(TrainError::from)?,
            ),
            Some(
                l.guarantee(Fix::Delta(config.guarantee_delta), Track::WorstCase)
                    .map_err(TrainError::from)?,
            ),
        ),
        None => (None, None),
    };
    Ok(GanRun {
        generator,
        critic,
        ledger,
        norm_log,
        bdp,
        worst_case,
        partial,
        generator_steps_run: steps_run,
    })
}

/// A reproducible batch of generated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub samples: Tensor,
    /// Hash of the generator parameters that produced the batch.
    pub checkpoint_id: String,
    pub seed: u64,
}

/// Hex id of a network's parameters, used to tie samples to checkpoints.
pub fn checkpoint_id(net: &Network) -> String {
    let mut bytes = Vec::with_capacity(net.param_count() * 8);
    for &p in net.params_flat().data() {
        bytes.extend_from_slice(&p.to_bits().to_le_bytes());
    }
    let mut out = String::new();
    let hash = fnv1a64(&bytes);
    for i in (0..16).rev() {
        let nibble = ((hash >> (i * 4)) & 0xf) as u8;
        out.push(char::from_digit(nibble as u32, 16).expect("nibble"));
    }
    out
}

/// Push `n` latent draws through the generator. Image-mode outputs are
/// squashed to `[0, 1]` via `(tanh + 1)/2`; a pure function of
/// `(checkpoint, seed, n)`.
pub fn generate(
    generator: &Network,
    n: usize,
    seed: u64,
    mode: DataMode,
) -> Result<SyntheticBatch, TrainError> {
    if n == 0 {
        return Err(TrainError::InvalidConfig("sample count must be positive"));
    }
    let mut rng = Streams::new(seed).stream("generate");
    let latents = draw_latents(n, generator.input_dim(), &mut rng);
    let mut samples = generator.forward(&latents)?;
    if mode == DataMode::UnitImage {
        for x in samples.data_mut() {
            *x = ((*x + 1.0) / 2.0).clamp(0.0, 1.0);
        }
    }
    Ok(SyntheticBatch {
        checkpoint_id: checkpoint_id(generator),
        samples,
        seed,
    })
}

/// Mode-coverage verdict over a known set of mixture centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoverage {
    /// Modes with at least 2% of samples within `3·std` of their center.
    pub covered: usize,
    /// Per-mode sample fractions (assigned by nearest center within
    /// `3·std`); they sum to at most 1.
    pub fractions: Vec<f64>,
}

/// Count covered modes: a sample is assigned to its nearest center when it
/// lies within `3·std` of it; a mode is covered when it collects >= 2% of
/// all samples.
pub fn mode_coverage(
    samples: &Tensor,
    centers: &[(f64, f64)],
    std: f64,
) -> Result<ModeCoverage, GanError> {
    let (n, w) = samples.as_matrix();
    if w != 2 {
        return Err(GanError::NotPlanar(w));
    }
    let mut counts = vec![0usize; centers.len()];
    let threshold = 3.0 * std;
    for i in 0..n {
        let p = samples.row(i);
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (j, &(cx, cy)) in centers.iter().enumerate() {
            let dist = ((p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy)).sqrt();
            if dist < best_dist {
                best = j;
                best_dist = dist;
            }
        }
        if best_dist <= threshold {
            counts[best] += 1;
        }
    }
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let covered = fractions.iter().filter(|&&f| f >= 0.02).count();
    Ok(ModeCoverage { covered, fractions })
}

/// Fraction of samples a detector classifier labels as rotated (class 1).
pub fn rotation_statistic(samples: &Tensor, detector: &Network) -> Result<f64, TrainError> {
    let classes = crate::dpsgd::predict_classes(detector, samples)?;
    let flagged = classes.iter().filter(|&&c| c == 1).count();
    Ok(flagged as f64 / classes.len() as f64)
}
