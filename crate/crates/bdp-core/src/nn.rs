//! Minimal dense network kernel with exact per-example backpropagation.
//!
//! There is no autodiff graph: the layer vocabulary is fixed (dense + one of
//! four activations) and gradients are derived by hand. That keeps
//! per-example gradients — the atoms the privacy accountant consumes — exact
//! and cheap. Everything is `f64`; the accountant's moment sums are
//! exponentially scaled and would eat a 32-bit error budget alive.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tensor::{check_finite, Tensor, TensorError};

const SELU_ALPHA: f64 = 1.6732632423543772;
const SELU_LAMBDA: f64 = 1.0507009873554805;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("layer {layer}: expected input width {expected}, got {actual}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer} input {in_dim} does not chain with previous output {prev_out}")]
    BrokenChain {
        layer: usize,
        prev_out: usize,
        in_dim: usize,
    },
    #[error("non-finite loss at example {example}")]
    NonFiniteLoss { example: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("labels do not conform to loss: {0}")]
    BadLabels(&'static str),
    #[error("loss requires scalar network output, got output_dim {output_dim}")]
    ScalarOutputRequired { output_dim: usize },
    #[error("gradient length {actual} does not match parameter count {expected}")]
    GradientLength { expected: usize, actual: usize },
    #[error("invalid optimizer config: {0}")]
    InvalidOptimizer(&'static str),
    #[error("unknown activation tag {0}")]
    UnknownActivation(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation input.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Stable byte tag used by the checkpoint format.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Selu => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::Identity => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, NnError> {
        match tag {
            0 => Ok(Activation::Selu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Relu),
            3 => Ok(Activation::Identity),
            other => Err(NnError::UnknownActivation(other)),
        }
    }
}

/// One dense layer: `y = act(W x + b)` with `W` stored row-major `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self, NnError> {
        let (out_dim, _in_dim) = weights.dims2()?;
        if bias.shape() != [out_dim] {
            return Err(NnError::DimensionMismatch {
                layer: 0,
                expected: out_dim,
                actual: bias.len(),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// A stack of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::BrokenChain {
                layer: 0,
                prev_out: 0,
                in_dim: 0,
            });
        }
        for i in 1..layers.len() {
            if layers[i].in_dim() != layers[i - 1].out_dim() {
                return Err(NnError::BrokenChain {
                    layer: i,
                    prev_out: layers[i - 1].out_dim(),
                    in_dim: layers[i].in_dim(),
                });
            }
        }
        let input_dim = layers[0].in_dim();
        let output_dim = layers[layers.len() - 1].out_dim();
        Ok(Self {
            layers,
            input_dim,
            output_dim,
        })
    }

    /// Random network: weights LeCun-normal `N(0, 1/fan_in)`, biases zero.
    /// `dims` lists layer widths including input and output; hidden layers
    /// use `hidden`, the final layer uses `output`.
    pub fn random<R: Rng>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::BrokenChain {
                layer: 0,
                prev_out: 0,
                in_dim: 0,
            });
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let std = (1.0 / in_dim as f64).sqrt();
            let mut w = Vec::with_capacity(out_dim * in_dim);
            for _ in 0..out_dim * in_dim {
                let z: f64 = rng.sample(StandardNormal);
                w.push(z * std);
            }
            let act = if l == dims.len() - 2 { output } else { hidden };
            layers.push(Layer::new(
                Tensor::new(vec![out_dim, in_dim], w)?,
                Tensor::zeros(vec![out_dim])?,
                act,
            )?);
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Concatenate `self` with `head` (output of `self` feeding `head`).
    pub fn stacked(&self, head: &Network) -> Result<Network, NnError> {
        let mut layers = self.layers.clone();
        layers.extend(head.layers.iter().cloned());
        Network::from_layers(layers)
    }

    /// Flatten all parameters, layer by layer, weights then bias.
    /// `set_params_flat` is the exact inverse.
    pub fn params_flat(&self) -> Tensor {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(layer.weights.data());
            flat.extend_from_slice(layer.bias.data());
        }
        Tensor::new(vec![flat.len()], flat).expect("params are finite")
    }

    pub fn set_params_flat(&mut self, flat: &Tensor) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::GradientLength {
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        check_finite(flat.data())?;
        let mut offset = 0;
        for layer in &mut self.layers {
            let wl = layer.weights.len();
            layer
                .weights
                .data_mut()
                .copy_from_slice(&flat.data()[offset..offset + wl]);
            offset += wl;
            let bl = layer.bias.len();
            layer
                .bias
                .data_mut()
                .copy_from_slice(&flat.data()[offset..offset + bl]);
            offset += bl;
        }
        Ok(())
    }

    /// Clamp every parameter into `[-bound, bound]` (WGAN weight clipping).
    pub fn clamp_params(&mut self, bound: f64) {
        for layer in &mut self.layers {
            for w in layer.weights.data_mut() {
                *w = w.clamp(-bound, bound);
            }
            for b in layer.bias.data_mut() {
                *b = b.clamp(-bound, bound);
            }
        }
    }

    /// Forward pass on a batch `[n, input_dim]`; returns `[n, output_dim]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        let (n, width) = batch.as_matrix();
        if width != self.input_dim {
            return Err(NnError::DimensionMismatch {
                layer: 0,
                expected: self.input_dim,
                actual: width,
            });
        }
        let mut scratch = Scratch::for_network(self);
        let mut out = Vec::with_capacity(n * self.output_dim);
        for i in 0..n {
            self.forward_example(batch.row(i), &mut scratch);
            out.extend_from_slice(scratch.post.last().expect("nonempty network"));
        }
        Ok(Tensor::new(vec![n, self.output_dim], out)?)
    }

    fn forward_example(&self, x: &[f64], scratch: &mut Scratch) {
        for (l, layer) in self.layers.iter().enumerate() {
            let in_dim = layer.in_dim();
            let (done, rest) = scratch.post.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &done[l - 1] };
            let post = &mut rest[0];
            let pre = &mut scratch.pre[l];
            for o in 0..layer.out_dim() {
                let row = &layer.weights.data()[o * in_dim..(o + 1) * in_dim];
                let mut acc = layer.bias.data()[o];
                for (w, v) in row.iter().zip(input.iter()) {
                    acc += w * v;
                }
                pre[o] = acc;
                post[o] = layer.activation.apply(acc);
            }
        }
    }

    /// Backward pass for one example. `scratch` must hold the forward state
    /// of the same example; the flat gradient is accumulated into `grad`
    /// (which must be zeroed by the caller) in `params_flat` order.
    fn backward_example(&self, x: &[f64], grad_out: &[f64], scratch: &mut Scratch, grad: &mut [f64]) {
        let last = self.layers.len() - 1;
        // Output-layer delta.
        for o in 0..self.output_dim {
            scratch.delta[last][o] =
                grad_out[o] * self.layers[last].activation.derivative(scratch.pre[last][o]);
        }
        // Propagate deltas backwards.
        for l in (0..last).rev() {
            let next = &self.layers[l + 1];
            let in_dim = next.in_dim();
            for i in 0..in_dim {
                let mut acc = 0.0;
                for o in 0..next.out_dim() {
                    acc += next.weights.data()[o * in_dim + i] * scratch.delta[l + 1][o];
                }
                scratch.delta[l][i] = acc * self.layers[l].activation.derivative(scratch.pre[l][i]);
            }
        }
        // Parameter gradients.
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let in_dim = layer.in_dim();
            let input: &[f64] = if l == 0 { x } else { &scratch.post[l - 1] };
            for o in 0..layer.out_dim() {
                let d = scratch.delta[l][o];
                let row = &mut grad[offset + o * in_dim..offset + (o + 1) * in_dim];
                for (g, v) in row.iter_mut().zip(input.iter()) {
                    *g += d * v;
                }
            }
            offset += layer.weights.len();
            for o in 0..layer.out_dim() {
                grad[offset + o] += scratch.delta[l][o];
            }
            offset += layer.bias.len();
        }
    }
}

struct Scratch {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    fn for_network(net: &Network) -> Self {
        let pre: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect();
        Self {
            post: pre.clone(),
            delta: pre.clone(),
            pre,
        }
    }

}

/// Scalar loss on network outputs, differentiable in the outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTag {
    /// Labels are class ids; loss is `-log softmax(y)[label]`.
    SoftmaxCrossEntropy,
    /// Critic on real data: minimize `-y` (scalar output).
    WassersteinCriticReal,
    /// Critic on generated data: minimize `+y` (scalar output).
    WassersteinCriticFake,
    /// Generator through a frozen critic: minimize `-y` (scalar output).
    WassersteinGenerator,
    /// Labels are target rows; loss is mean squared error over output dims.
    Mse,
}

enum LabelRef<'a> {
    Class(usize),
    Targets(&'a [f64]),
    None,
}

impl LossTag {
    fn validate(self, n: usize, output_dim: usize, labels: &Tensor) -> Result<(), NnError> {
        match self {
            LossTag::SoftmaxCrossEntropy => {
                let (ln, lw) = labels.as_matrix();
                if ln != n || lw != 1 {
                    return Err(NnError::BadLabels("softmax labels must be one id per example"));
                }
                for &v in labels.data() {
                    if v < 0.0 || v.fract() != 0.0 || v as usize >= output_dim {
                        return Err(NnError::BadLabels("class id out of range"));
                    }
                }
                Ok(())
            }
            LossTag::Mse => {
                let (ln, lw) = labels.as_matrix();
                if ln != n || lw != output_dim {
                    return Err(NnError::BadLabels("mse targets must match output shape"));
                }
                Ok(())
            }
            _ => {
                if output_dim != 1 {
                    return Err(NnError::ScalarOutputRequired { output_dim });
                }
                Ok(())
            }
        }
    }

    fn label_ref<'a>(self, labels: &'a Tensor, example: usize) -> LabelRef<'a> {
        match self {
            LossTag::SoftmaxCrossEntropy => LabelRef::Class(labels.data()[example] as usize),
            LossTag::Mse => LabelRef::Targets(labels.row(example)),
            _ => LabelRef::None,
        }
    }

    /// Loss value and gradient w.r.t. the outputs, written into `grad_out`.
    fn eval(self, y: &[f64], label: &LabelRef<'_>, grad_out: &mut [f64]) -> f64 {
        match (self, label) {
            (LossTag::SoftmaxCrossEntropy, LabelRef::Class(c)) => {
                let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (g, &v) in grad_out.iter_mut().zip(y.iter()) {
                    *g = (v - max).exp();
                    sum += *g;
                }
                for g in grad_out.iter_mut() {
                    *g /= sum;
                }
                grad_out[*c] -= 1.0;
                sum.ln() + max - y[*c]
            }
            (LossTag::Mse, LabelRef::Targets(t)) => {
                let d = y.len() as f64;
                let mut loss = 0.0;
                for ((g, &v), &tv) in grad_out.iter_mut().zip(y.iter()).zip(t.iter()) {
                    let diff = v - tv;
                    loss += diff * diff;
                    *g = 2.0 * diff / d;
                }
                loss / d
            }
            (LossTag::WassersteinCriticReal, _) | (LossTag::WassersteinGenerator, _) => {
                grad_out[0] = -1.0;
                -y[0]
            }
            (LossTag::WassersteinCriticFake, _) => {
                grad_out[0] = 1.0;
                y[0]
            }
            _ => unreachable!("labels validated against loss"),
        }
    }
}

/// Stream per-example flat gradients without materializing them all.
/// The callback receives `(example index, loss value, flat gradient)`.
pub(crate) fn for_each_example_gradient<F>(
    net: &Network,
    batch: &Tensor,
    labels: &Tensor,
    loss: LossTag,
    mut f: F,
) -> Result<(), NnError>
where
    F: FnMut(usize, f64, &[f64]),
{
    let (n, width) = batch.as_matrix();
    if n == 0 {
        return Err(NnError::EmptyBatch);
    }
    if width != net.input_dim {
        return Err(NnError::DimensionMismatch {
            layer: 0,
            expected: net.input_dim,
            actual: width,
        });
    }
    loss.validate(n, net.output_dim, labels)?;
    let mut scratch = Scratch::for_network(net);
    let mut grad_out = vec![0.0; net.output_dim];
    let mut grad = vec![0.0; net.param_count()];
    for i in 0..n {
        let x = batch.row(i);
        net.forward_example(x, &mut scratch);
        let y = scratch.post.last().expect("nonempty network").clone();
        let label = loss.label_ref(labels, i);
        let loss_value = loss.eval(&y, &label, &mut grad_out);
        if !loss_value.is_finite() {
            return Err(NnError::NonFiniteLoss { example: i });
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        net.backward_example(x, &grad_out, &mut scratch, &mut grad);
        f(i, loss_value, &grad);
    }
    Ok(())
}

/// Per-example flat gradients of the loss, one tensor per example.
pub fn per_example_gradients(
    net: &Network,
    batch: &Tensor,
    labels: &Tensor,
    loss: LossTag,
) -> Result<Vec<Tensor>, NnError> {
    let mut grads = Vec::with_capacity(batch.num_rows());
    for_each_example_gradient(net, batch, labels, loss, |_, _, g| {
        grads.push(Tensor::new(vec![g.len()], g.to_vec()).expect("gradient finite"));
    })?;
    Ok(grads)
}

/// Whole-batch gradient of the mean loss, plus the mean loss itself.
pub fn batch_gradient(
    net: &Network,
    batch: &Tensor,
    labels: &Tensor,
    loss: LossTag,
) -> Result<(Tensor, f64), NnError> {
    let n = batch.num_rows() as f64;
    let mut sum = vec![0.0; net.param_count()];
    let mut loss_sum = 0.0;
    for_each_example_gradient(net, batch, labels, loss, |_, lv, g| {
        loss_sum += lv;
        for (s, gi) in sum.iter_mut().zip(g.iter()) {
            *s += gi;
        }
    })?;
    for s in sum.iter_mut() {
        *s /= n;
    }
    Ok((Tensor::new(vec![sum.len()], sum)?, loss_sum / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Sgd,
    RmsProp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub rule: UpdateRule,
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            rule: UpdateRule::Sgd,
            lr,
            decay: 0.0,
            eps: 0.0,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self {
            rule: UpdateRule::RmsProp,
            lr,
            decay: 0.99,
            eps: 1e-8,
        }
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(NnError::InvalidOptimizer("learning rate must be positive"));
        }
        if self.rule == UpdateRule::RmsProp {
            if !(0.0..1.0).contains(&self.decay) {
                return Err(NnError::InvalidOptimizer("decay must be in [0, 1)"));
            }
            if self.eps <= 0.0 {
                return Err(NnError::InvalidOptimizer("eps must be positive"));
            }
        }
        Ok(())
    }
}

/// Accumulator state for the rmsprop-style rule; empty until first use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    second_moment: Vec<f64>,
}

/// Apply one optimizer step in place.
///
/// - sgd: `p ← p − lr·g`
/// - rmsprop-style: `s ← decay·s + (1−decay)·g²`, `p ← p − lr·g/√(s+eps)`
pub fn optimizer_step(
    net: &mut Network,
    grad: &Tensor,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<(), NnError> {
    config.validate()?;
    let count = net.param_count();
    if grad.len() != count {
        return Err(NnError::GradientLength {
            expected: count,
            actual: grad.len(),
        });
    }
    if config.rule == UpdateRule::RmsProp {
        if state.second_moment.is_empty() {
            state.second_moment = vec![0.0; count];
        } else if state.second_moment.len() != count {
            return Err(NnError::GradientLength {
                expected: count,
                actual: state.second_moment.len(),
            });
        }
    }
    let g = grad.data();
    let mut offset = 0;
    for layer in &mut net.layers {
        for chunk in [layer.weights.data_mut(), layer.bias.data_mut()] {
            for (i, p) in chunk.iter_mut().enumerate() {
                let gi = g[offset + i];
                match config.rule {
                    UpdateRule::Sgd => *p -= config.lr * gi,
                    UpdateRule::RmsProp => {
                        let s = &mut state.second_moment[offset + i];
                        *s = config.decay * *s + (1.0 - config.decay) * gi * gi;
                        *p -= config.lr * gi / (*s + config.eps).sqrt();
                    }
                }
            }
            offset += chunk.len();
        }
    }
    Ok(())
}
