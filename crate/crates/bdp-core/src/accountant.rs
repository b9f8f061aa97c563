//! Dual privacy accountant.
//!
//! Two tracks are maintained in parallel over the same grid of integer
//! moment orders λ:
//!
//! - the Bayesian track estimates the per-iteration cost from sampled
//!   gradient-difference norms, taking an upper confidence bound on the
//!   moment-domain mean;
//! - the worst-case track evaluates the same cost formulas at the clipping
//!   bound `d = C`, which dominates any sampled estimate and recovers a
//!   classical DP-style guarantee for out-of-distribution data.
//!
//! Per-iteration cost at order λ is `max(left, right)` of two binomial
//! moments:
//!
//! ```text
//! left:  log E[exp((k² − k)/(2σ²) · d²)],  k ~ B(λ+1, q)
//! right: log E[exp((k² + k)/(2σ²) · d²)],  k ~ B(λ,   q)
//! ```
//!
//! with `q` the Poisson batch-inclusion probability and `d` the norm of the
//! gradient difference between adjacent datasets, measured in units of the
//! absolute noise stddev's scale (callers pass `d` and the noise scale in
//! the same units; the ledger normalizes norms by the clip bound and uses
//! the dimensionless multiplier).
//!
//! Costs compose additively across iterations; a guarantee is extracted by
//! fixing either ε or δ in `log δ ≤ Σ_t c_t(λ) − λ·ε` and minimizing over
//! the grid.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountantError {
    #[error("moment order lambda must be >= 1")]
    LambdaZero,
    #[error("success probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("noise scale must be positive and finite, got {0}")]
    InvalidNoiseScale(f64),
    #[error("distance must be nonnegative and finite, got {0}")]
    InvalidDistance(f64),
    #[error("invalid accountant config: {0}")]
    InvalidConfig(&'static str),
    #[error("Bayesian cost estimation needs at least 2 norm samples, got {0}; use the worst-case track")]
    SampleTooSmall(usize),
    #[error("norm {norm} at sample index {index} exceeds the clip bound {clip_norm}; clipping contract violated upstream")]
    NormExceedsClip {
        index: usize,
        norm: f64,
        clip_norm: f64,
    },
    #[error("cost vector length {actual} does not match the lambda grid length {expected}")]
    GridMismatch { expected: usize, actual: usize },
    #[error("cost must be nonnegative and finite, got {0}")]
    InvalidCost(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("epsilon must be nonnegative and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("delta_target {delta_target} must lie in [delta_mu, 1) with delta_mu {delta_mu} > 0")]
    PercentileDirection { delta_mu: f64, delta_target: f64 },
}

/// Which of the two per-iteration cost moments to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `k ~ B(lambda + 1, q)`, exponent `(k² − k)/(2σ²) · d²`.
    Left,
    /// `k ~ B(lambda, q)`, exponent `(k² + k)/(2σ²) · d²`.
    Right,
}

/// Which accumulated track a guarantee is extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Track {
    Bdp,
    WorstCase,
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Track::Bdp => write!(f, "bdp"),
            Track::WorstCase => write!(f, "worst_case"),
        }
    }
}

/// Fix one parameter of the composition bound and solve for the other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fix {
    Epsilon(f64),
    Delta(f64),
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = vec![0.0; n + 1];
    let mut acc = 0.0;
    for (i, slot) in table.iter_mut().enumerate().skip(1) {
        acc += (i as f64).ln();
        *slot = acc;
    }
    table
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Log-moment `log E_{k~B(n, q)}[exp(coef(k)·d²/(2s²))]` for one side,
/// evaluated by exact summation over `k` in log space.
///
/// `noise_std` and `d` must be in the same units. Returns exactly `0` for
/// `d = 0` or `q = 0`.
pub fn binomial_moment(
    lambda: u32,
    q: f64,
    noise_std: f64,
    d: f64,
    side: Side,
) -> Result<f64, AccountantError> {
    if lambda == 0 {
        return Err(AccountantError::LambdaZero);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(AccountantError::InvalidProbability(q));
    }
    if !(noise_std > 0.0) || !noise_std.is_finite() {
        return Err(AccountantError::InvalidNoiseScale(noise_std));
    }
    if !(d >= 0.0) || !d.is_finite() {
        return Err(AccountantError::InvalidDistance(d));
    }
    if d == 0.0 || q == 0.0 {
        return Ok(0.0);
    }
    let scale = d * d / (2.0 * noise_std * noise_std);
    let (n, coef): (u32, fn(f64) -> f64) = match side {
        Side::Left => (lambda + 1, |k| k * k - k),
        Side::Right => (lambda, |k| k * k + k),
    };
    if q == 1.0 {
        // Point mass at k = n.
        return Ok(coef(n as f64) * scale);
    }
    let lnfact = ln_factorials(n as usize);
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let mut terms = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        let kf = k as f64;
        let log_pmf = lnfact[n as usize] - lnfact[k as usize] - lnfact[(n - k) as usize]
            + kf * ln_q
            + (n - k) as f64 * ln_1mq;
        terms.push(log_pmf + coef(kf) * scale);
    }
    Ok(log_sum_exp(&terms))
}

/// Worst-case per-iteration cost: both sides evaluated at the clipping
/// bound (`d = C` against noise stddev `C·sigma`), maximized.
///
/// This dominates any `cost_from_samples` output with the same parameters.
pub fn worst_case_cost(
    lambda: u32,
    q: f64,
    sigma: f64,
    clip_norm: f64,
) -> Result<f64, AccountantError> {
    if !(clip_norm > 0.0) || !clip_norm.is_finite() {
        return Err(AccountantError::InvalidDistance(clip_norm));
    }
    let left = binomial_moment(lambda, q, clip_norm * sigma, clip_norm, Side::Left)?;
    let right = binomial_moment(lambda, q, clip_norm * sigma, clip_norm, Side::Right)?;
    Ok(left.max(right))
}

/// Accountant configuration shared by both tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountantConfig {
    /// Ascending positive moment orders; defaults to `1..=32`.
    pub lambda_grid: Vec<u32>,
    /// Poisson batch-inclusion probability.
    pub q: f64,
    /// Noise multiplier of the mechanism (dimensionless).
    pub sigma: f64,
    /// Clip bound of the mechanism; sampled norms never exceed it.
    pub clip_norm: f64,
    /// Norm samples drawn per accounted iteration.
    pub m: usize,
    /// Per-iteration failure level of the upper confidence bound.
    pub gamma: f64,
}

impl AccountantConfig {
    pub fn new(q: f64, sigma: f64, clip_norm: f64) -> Self {
        Self {
            lambda_grid: Self::default_grid(),
            q,
            sigma,
            clip_norm,
            m: 64,
            gamma: 1e-6,
        }
    }

    pub fn default_grid() -> Vec<u32> {
        (1..=32).collect()
    }

    pub fn validate(&self) -> Result<(), AccountantError> {
        if self.lambda_grid.is_empty() {
            return Err(AccountantError::InvalidConfig("lambda grid is empty"));
        }
        if self.lambda_grid[0] == 0 {
            return Err(AccountantError::LambdaZero);
        }
        if !self.lambda_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(AccountantError::InvalidConfig(
                "lambda grid must be strictly ascending",
            ));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(AccountantError::InvalidProbability(self.q));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(AccountantError::InvalidNoiseScale(self.sigma));
        }
        if !(self.clip_norm > 0.0) || !self.clip_norm.is_finite() {
            return Err(AccountantError::InvalidDistance(self.clip_norm));
        }
        if self.m < 2 {
            return Err(AccountantError::SampleTooSmall(self.m));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AccountantError::InvalidConfig("gamma must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Batch of per-example clipped gradient norms drawn at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientNormSample {
    pub norms: Vec<f64>,
    pub iteration: u64,
}

/// Per-order breakdown of one Bayesian cost estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDetail {
    pub lambda: u32,
    /// Moment-domain sample means, left and right side.
    pub left_mean: f64,
    pub right_mean: f64,
    /// Upper confidence bounds on the means (moment domain, clamped to the
    /// worst-case value).
    pub left_ucb: f64,
    pub right_ucb: f64,
    /// `max(log left_ucb, log right_ucb)`, the accounted cost.
    pub cost: f64,
}

/// Empirical-Bernstein upper confidence bound on the mean of values in
/// `[1, bound]` at level `1 − gamma`. A zero-variance sample is treated as
/// point-mass evidence and returns the sample mean.
fn empirical_bernstein_ucb(values: &[f64], bound: f64, gamma: f64) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    if var == 0.0 {
        return mean;
    }
    let log_term = (2.0 / gamma).ln();
    let ucb = mean
        + (2.0 * var * log_term / m).sqrt()
        + 7.0 * (bound - 1.0) * log_term / (3.0 * (m - 1.0));
    ucb.min(bound)
}

/// Bayesian per-iteration cost vector estimated from sampled norms, with
/// the per-order breakdown.
///
/// For each order and side, the inner binomial moment is evaluated per
/// sampled norm (normalized by the clip bound), and an upper confidence
/// bound at level `1 − gamma/2` per side is taken on the moment-domain
/// mean, clamped to the worst-case (`d = C`) value. The returned cost never
/// exceeds [`worst_case_cost`] for the same configuration.
pub fn cost_from_samples_detailed(
    sample: &GradientNormSample,
    config: &AccountantConfig,
) -> Result<Vec<CostDetail>, AccountantError> {
    config.validate()?;
    let m = sample.norms.len();
    if m < 2 {
        return Err(AccountantError::SampleTooSmall(m));
    }
    for (index, &norm) in sample.norms.iter().enumerate() {
        if !(norm >= 0.0) || !norm.is_finite() || norm > config.clip_norm {
            return Err(AccountantError::NormExceedsClip {
                index,
                norm,
                clip_norm: config.clip_norm,
            });
        }
    }
    let gamma_side = config.gamma / 2.0;
    let mut details = Vec::with_capacity(config.lambda_grid.len());
    let mut values = vec![0.0; m];
    for &lambda in &config.lambda_grid {
        let mut side_mean = [0.0; 2];
        let mut side_ucb = [0.0; 2];
        let mut cost = 0.0;
        for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            let worst_log = binomial_moment(lambda, config.q, config.sigma, 1.0, side)?;
            for (v, &norm) in values.iter_mut().zip(sample.norms.iter()) {
                let d = norm / config.clip_norm;
                *v = binomial_moment(lambda, config.q, config.sigma, d, side)?.exp();
            }
            let mean = values.iter().sum::<f64>() / m as f64;
            let ucb = empirical_bernstein_ucb(&values, worst_log.exp(), gamma_side);
            side_mean[s] = mean;
            side_ucb[s] = ucb;
            cost = cost.max(ucb.ln().clamp(0.0, worst_log));
        }
        details.push(CostDetail {
            lambda,
            left_mean: side_mean[0],
            right_mean: side_mean[1],
            left_ucb: side_ucb[0],
            right_ucb: side_ucb[1],
            cost,
        });
    }
    Ok(details)
}

/// Bayesian per-iteration cost vector on the configured lambda grid.
pub fn cost_from_samples(
    sample: &GradientNormSample,
    config: &AccountantConfig,
) -> Result<Vec<f64>, AccountantError> {
    Ok(cost_from_samples_detailed(sample, config)?
        .into_iter()
        .map(|d| d.cost)
        .collect())
}

/// Worst-case per-iteration cost vector on the configured lambda grid.
pub fn worst_case_vector(config: &AccountantConfig) -> Result<Vec<f64>, AccountantError> {
    config.validate()?;
    config
        .lambda_grid
        .iter()
        .map(|&l| worst_case_cost(l, config.q, config.sigma, config.clip_norm))
        .collect()
}

/// A `(epsilon, delta)` statement extracted from one track of the ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyGuarantee {
    pub epsilon: f64,
    pub delta: f64,
    pub track: Track,
    pub achieving_lambda: u32,
    /// For the Bayesian track: `(p, epsilon, delta_p)` statements holding
    /// for at least fraction `p` of the data distribution, via Markov.
    pub percentile_pairs: Vec<PercentilePair>,
    /// Total confidence mass spent by the UCB estimator across iterations.
    pub gamma_spent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentilePair {
    pub percentile: f64,
    pub epsilon: f64,
    pub delta: f64,
}

/// Markov tail bound induced by a Bayesian guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileBound {
    pub epsilon: f64,
    pub delta_target: f64,
    /// `delta_mu / delta_target`: upper bound on the mass of the data
    /// distribution for which `(epsilon, delta_target)`-DP may fail.
    pub violating_mass: f64,
}

impl PercentileBound {
    pub fn coverage(&self) -> f64 {
        1.0 - self.violating_mass
    }
}

impl fmt::Display for PercentileBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {:e})-DP holds for at least {} of the data distribution (violating mass <= {:e})",
            self.epsilon,
            self.delta_target,
            self.coverage(),
            self.violating_mass
        )
    }
}

/// Expected failure mass `delta_mu` converted to a tail statement at a
/// per-point level `delta_target >= delta_mu`:
/// `Pr_x[ Delta(epsilon, x) > delta_target ] <= delta_mu / delta_target`.
///
/// The ratio is evaluated in exact decimal arithmetic on the shortest
/// decimal form of the inputs whenever it terminates (so e.g.
/// `1e-10 / 1e-5` is exactly `1e-5`), falling back to float division.
pub fn markov_percentile(
    epsilon: f64,
    delta_mu: f64,
    delta_target: f64,
) -> Result<PercentileBound, AccountantError> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(AccountantError::InvalidEpsilon(epsilon));
    }
    if !(delta_mu > 0.0 && delta_mu < 1.0) {
        return Err(AccountantError::InvalidDelta(delta_mu));
    }
    if !(delta_target >= delta_mu && delta_target < 1.0) {
        return Err(AccountantError::PercentileDirection {
            delta_mu,
            delta_target,
        });
    }
    Ok(PercentileBound {
        epsilon,
        delta_target,
        violating_mass: decimal_ratio(delta_mu, delta_target),
    })
}

/// `a / b` computed in exact decimal arithmetic on the shortest decimal
/// representations when the quotient terminates; plain division otherwise.
pub(crate) fn decimal_ratio(a: f64, b: f64) -> f64 {
    exact_decimal_ratio(a, b).unwrap_or(a / b)
}

fn shortest_decimal(x: f64) -> Option<(u128, i32)> {
    if !(x > 0.0) || !x.is_finite() {
        return None;
    }
    let s = format!("{:e}", x);
    let (mantissa, exp) = s.split_once('e')?;
    let exp: i32 = exp.parse().ok()?;
    let mut digits: u128 = 0;
    let mut after_point = 0i32;
    let mut seen_point = false;
    for c in mantissa.chars() {
        match c {
            '.' => seen_point = true,
            '0'..='9' => {
                digits = digits.checked_mul(10)?.checked_add((c as u8 - b'0') as u128)?;
                if seen_point {
                    after_point += 1;
                }
            }
            _ => return None,
        }
    }
    Some((digits, exp - after_point))
}

fn exact_decimal_ratio(a: f64, b: f64) -> Option<f64> {
    let (ma, ea) = shortest_decimal(a)?;
    let (mb, eb) = shortest_decimal(b)?;
    let g = gcd(ma, mb);
    let ma = ma / g;
    let mut mb = mb / g;
    let mut twos = 0u32;
    while mb % 2 == 0 {
        mb /= 2;
        twos += 1;
    }
    let mut fives = 0u32;
    while mb % 5 == 0 {
        mb /= 5;
        fives += 1;
    }
    if mb != 1 || twos + fives > 40 {
        return None;
    }
    let mut digits = ma;
    for _ in 0..twos {
        digits = digits.checked_mul(5)?;
    }
    for _ in 0..fives {
        digits = digits.checked_mul(2)?;
    }
    let exp = ea - eb - (twos + fives) as i32;
    format!("{}e{}", digits, exp).parse::<f64>().ok()
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Percentile levels reported alongside every Bayesian guarantee, stored as
/// the exact violating-mass levels `1 − p`.
const REPORTED_TAIL_MASSES: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

/// Accumulated per-order cost sums for both tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    config: AccountantConfig,
    bdp_costs: Vec<f64>,
    wc_costs: Vec<f64>,
    iterations: u64,
    gamma_spent: f64,
    wc_step: Vec<f64>,
}

impl PrivacyLedger {
    pub fn new(config: AccountantConfig) -> Result<Self, AccountantError> {
        config.validate()?;
        let len = config.lambda_grid.len();
        let wc_step = worst_case_vector(&config)?;
        Ok(Self {
            config,
            bdp_costs: vec![0.0; len],
            wc_costs: vec![0.0; len],
            iterations: 0,
            gamma_spent: 0.0,
            wc_step,
        })
    }

    /// Rebuild a ledger from persisted state.
    pub fn restore(
        config: AccountantConfig,
        bdp_costs: Vec<f64>,
        wc_costs: Vec<f64>,
        iterations: u64,
        gamma_spent: f64,
    ) -> Result<Self, AccountantError> {
        let mut ledger = Self::new(config)?;
        if bdp_costs.len() != ledger.bdp_costs.len() || wc_costs.len() != ledger.wc_costs.len() {
            return Err(AccountantError::GridMismatch {
                expected: ledger.bdp_costs.len(),
                actual: bdp_costs.len(),
            });
        }
        for &c in bdp_costs.iter().chain(wc_costs.iter()) {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(AccountantError::InvalidCost(c));
            }
        }
        ledger.bdp_costs = bdp_costs;
        ledger.wc_costs = wc_costs;
        ledger.iterations = iterations;
        ledger.gamma_spent = gamma_spent;
        Ok(ledger)
    }

    pub fn config(&self) -> &AccountantConfig {
        &self.config
    }

    pub fn lambda_grid(&self) -> &[u32] {
        &self.config.lambda_grid
    }

    pub fn bdp_sums(&self) -> &[f64] {
        &self.bdp_costs
    }

    pub fn worst_case_sums(&self) -> &[f64] {
        &self.wc_costs
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn gamma_spent(&self) -> f64 {
        self.gamma_spent
    }

    /// Add one iteration's cost vectors (both tracks).
    pub fn update(&mut self, bdp: &[f64], worst_case: &[f64]) -> Result<(), AccountantError> {
        let expected = self.config.lambda_grid.len();
        if bdp.len() != expected || worst_case.len() != expected {
            return Err(AccountantError::GridMismatch {
                expected,
                actual: if bdp.len() != expected {
                    bdp.len()
                } else {
                    worst_case.len()
                },
            });
        }
        for &c in bdp.iter().chain(worst_case.iter()) {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(AccountantError::InvalidCost(c));
            }
        }
        for (sum, &c) in self.bdp_costs.iter_mut().zip(bdp.iter()) {
            *sum += c;
        }
        for (sum, &c) in self.wc_costs.iter_mut().zip(worst_case.iter()) {
            *sum += c;
        }
        self.iterations += 1;
        self.gamma_spent += self.config.gamma;
        Ok(())
    }

    /// Estimate the Bayesian cost from `sample` and record both tracks.
    pub fn record(&mut self, sample: &GradientNormSample) -> Result<(), AccountantError> {
        let bdp = cost_from_samples(sample, &self.config)?;
        let wc = self.wc_step.clone();
        self.update(&bdp, &wc)
    }

    /// Extract a guarantee by fixing ε or δ and optimizing over the grid.
    ///
    /// An empty ledger is allowed and yields the no-composition bound.
    pub fn guarantee(&self, fix: Fix, track: Track) -> Result<PrivacyGuarantee, AccountantError> {
        let sums = match track {
            Track::Bdp => &self.bdp_costs,
            Track::WorstCase => &self.wc_costs,
        };
        extract_guarantee(&self.config.lambda_grid, sums, fix, track, self.gamma_spent)
    }
}

/// Guarantee extraction over explicit per-order sums.
pub fn extract_guarantee(
    lambda_grid: &[u32],
    cost_sums: &[f64],
    fix: Fix,
    track: Track,
    gamma_spent: f64,
) -> Result<PrivacyGuarantee, AccountantError> {
    if lambda_grid.is_empty() || lambda_grid.len() != cost_sums.len() {
        return Err(AccountantError::GridMismatch {
            expected: lambda_grid.len(),
            actual: cost_sums.len(),
        });
    }
    let (epsilon, delta, achieving_lambda) = match fix {
        Fix::Delta(delta) => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(AccountantError::InvalidDelta(delta));
            }
            let mut best = (f64::INFINITY, lambda_grid[0]);
            for (&lambda, &sum) in lambda_grid.iter().zip(cost_sums.iter()) {
                let eps = (sum - delta.ln()) / lambda as f64;
                if eps < best.0 {
                    best = (eps, lambda);
                }
            }
            (best.0, delta, best.1)
        }
        Fix::Epsilon(epsilon) => {
            if !(epsilon >= 0.0) || !epsilon.is_finite() {
                return Err(AccountantError::InvalidEpsilon(epsilon));
            }
            let mut best = (f64::INFINITY, lambda_grid[0]);
            for (&lambda, &sum) in lambda_grid.iter().zip(cost_sums.iter()) {
                let log_delta = sum - lambda as f64 * epsilon;
                if log_delta < best.0 {
                    best = (log_delta, lambda);
                }
            }
            (epsilon, best.0.exp().min(1.0), best.1)
        }
    };
    let percentile_pairs = match track {
        Track::WorstCase => Vec::new(),
        Track::Bdp => REPORTED_TAIL_MASSES
            .iter()
            .filter_map(|&mass| {
                let delta_p = decimal_ratio(delta, mass);
                (delta_p < 1.0 && delta_p >= delta).then_some(PercentilePair {
                    percentile: 1.0 - mass,
                    epsilon,
                    delta: delta_p,
                })
            })
            .collect(),
    };
    Ok(PrivacyGuarantee {
        epsilon,
        delta,
        track,
        achieving_lambda,
        percentile_pairs,
        gamma_spent,
    })
}

/// Human-readable summary used by reports and the offline accountant.
pub fn guarantee_summary(g: &PrivacyGuarantee) -> String {
    format!(
        "({}, {:e})-{} at lambda={} (gamma_spent={:e})",
        g.epsilon,
        g.delta,
        match g.track {
            Track::Bdp => "BDP",
            Track::WorstCase => "DP",
        },
        g.achieving_lambda,
        g.gamma_spent
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use rand::Rng;

    fn config_for_test() -> AccountantConfig {
        AccountantConfig::new(0.1, 2.0, 1.0)
    }

    #[test]
    fn zero_distance_and_zero_q_cost_nothing() {
        for side in [Side::Left, Side::Right] {
            assert_eq!(binomial_moment(5, 0.3, 1.5, 0.0, side).unwrap(), 0.0);
            assert_eq!(binomial_moment(5, 0.0, 1.5, 0.8, side).unwrap(), 0.0);
        }
    }

    #[test]
    fn lambda_zero_is_rejected() {
        assert!(matches!(
            binomial_moment(0, 0.5, 1.0, 1.0, Side::Right),
            Err(AccountantError::LambdaZero)
        ));
    }

    #[test]
    fn right_side_lambda2_matches_direct_summation() {
        // k ~ B(2, 0.5), exponent k(k+1)/2: pmf (1/4, 1/2, 1/4), values
        // (e^0, e^1, e^3).
        let expected = (0.25 + 0.5 * 1.0f64.exp() + 0.25 * 3.0f64.exp()).ln();
        let got = binomial_moment(2, 0.5, 1.0, 1.0, Side::Right).unwrap();
        assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
        assert!((got - 1.8916840084556674).abs() <= 1e-12);
    }

    #[test]
    fn right_side_lambda2_matches_monte_carlo() {
        let mut rng = Streams::new(17).stream("mc");
        let draws = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let mut k = 0u32;
            for _ in 0..2 {
                if rng.random::<f64>() < 0.5 {
                    k += 1;
                }
            }
            let v = ((k * k + k) as f64 / 2.0).exp();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / draws as f64;
        let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
        let se = (var / draws as f64).sqrt();
        let exact = binomial_moment(2, 0.5, 1.0, 1.0, Side::Right).unwrap().exp();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "mc {mean} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn degenerate_q1_point_mass_is_closed_form() {
        let got = binomial_moment(1, 1.0, 1.0, 1.0, Side::Right).unwrap();
        assert_eq!(got, 1.0);
        for lambda in [1u32, 2, 4, 8, 16, 32] {
            for d in [0.1, 0.5, 1.0] {
                for sigma in [0.8, 1.0, 4.0] {
                    let got = binomial_moment(lambda, 1.0, sigma, d, Side::Right).unwrap();
                    let expected =
                        (lambda as f64) * (lambda as f64 + 1.0) * d * d / (2.0 * sigma * sigma);
                    assert!(
                        (got - expected).abs() <= 1e-9 * expected.abs().max(1e-300),
                        "lambda={lambda} d={d} sigma={sigma}"
                    );
                }
            }
        }
    }

    #[test]
    fn worst_case_vanishes_for_huge_sigma() {
        let cost = worst_case_cost(8, 0.01, 1e6, 1.0).unwrap();
        assert!(cost >= 0.0);
        assert!(cost <= 1e-9);
    }

    #[test]
    fn worst_case_monotone_in_lambda() {
        let mut prev = 0.0;
        for lambda in 1..=32 {
            let cost = worst_case_cost(lambda, 0.05, 2.0, 1.0).unwrap();
            assert!(cost >= prev - 1e-12, "lambda {lambda}");
            prev = cost;
        }
    }

    #[test]
    fn zero_norms_cost_exactly_zero() {
        let config = config_for_test();
        let sample = GradientNormSample {
            norms: vec![0.0; 16],
            iteration: 0,
        };
        let costs = cost_from_samples(&sample, &config).unwrap();
        assert!(costs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn saturated_norms_at_full_q_clamp_to_worst_case() {
        let mut config = config_for_test();
        config.q = 1.0;
        let sample = GradientNormSample {
            norms: vec![config.clip_norm; 8],
            iteration: 0,
        };
        let costs = cost_from_samples(&sample, &config).unwrap();
        let worst = worst_case_vector(&config).unwrap();
        for (c, w) in costs.iter().zip(worst.iter()) {
            assert!(*c <= *w);
            assert!((c - w).abs() <= 1e-12 * w.max(1.0));
        }
    }

    #[test]
    fn sample_mean_converges_to_exact_mixture() {
        // Norms drawn i.i.d. from a fixed discrete distribution; the
        // moment-domain sample mean must approach the exact mixture.
        let config = AccountantConfig {
            lambda_grid: vec![1, 2, 4],
            ..AccountantConfig::new(0.05, 2.0, 1.0)
        };
        let support = [0.0, 0.2, 0.5, 0.9];
        let probs = [0.4, 0.3, 0.2, 0.1];
        let mut rng = Streams::new(23).stream("mixture");
        let m = 10_000usize;
        let norms: Vec<f64> = (0..m)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in support.iter().zip(probs.iter()) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                support[3]
            })
            .collect();
        let sample = GradientNormSample { norms: norms.clone(), iteration: 0 };
        let details = cost_from_samples_detailed(&sample, &config).unwrap();
        for detail in details {
            let lambda = detail.lambda;
            // Exact mixture and per-point values for the standard error.
            let exact: f64 = support
                .iter()
                .zip(probs.iter())
                .map(|(&v, &p)| {
                    p * binomial_moment(lambda, config.q, config.sigma, v, Side::Right)
                        .unwrap()
                        .exp()
                })
                .sum();
            let values: Vec<f64> = norms
                .iter()
                .map(|&v| {
                    binomial_moment(lambda, config.q, config.sigma, v, Side::Right)
                        .unwrap()
                        .exp()
                })
                .collect();
            let mean = values.iter().sum::<f64>() / m as f64;
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m as f64 - 1.0);
            let se = (var / m as f64).sqrt();
            assert!(
                (detail.right_mean - exact).abs() <= 3.0 * se.max(1e-15),
                "lambda={lambda}: mean {} vs exact {exact} (se {se})",
                detail.right_mean
            );
        }
    }

    #[test]
    fn single_norm_is_rejected_towards_worst_case_track() {
        let config = config_for_test();
        let sample = GradientNormSample { norms: vec![0.5], iteration: 0 };
        assert!(matches!(
            cost_from_samples(&sample, &config),
            Err(AccountantError::SampleTooSmall(1))
        ));
    }

    #[test]
    fn norm_above_clip_bound_is_a_hard_error() {
        let config = config_for_test();
        let sample = GradientNormSample {
            norms: vec![0.2, 1.5],
            iteration: 3,
        };
        assert!(matches!(
            cost_from_samples(&sample, &config),
            Err(AccountantError::NormExceedsClip { index: 1, .. })
        ));
    }

    #[test]
    fn ledger_updates_are_additive() {
        let config = config_for_test();
        let mut ledger = PrivacyLedger::new(config.clone()).unwrap();
        let bdp: Vec<f64> = (0..config.lambda_grid.len()).map(|i| 0.01 * i as f64).collect();
        let wc = worst_case_vector(&config).unwrap();
        let mut expected = vec![0.0; bdp.len()];
        for _ in 0..7 {
            ledger.update(&bdp, &wc).unwrap();
            for (e, b) in expected.iter_mut().zip(bdp.iter()) {
                *e += b;
            }
        }
        assert_eq!(ledger.iterations(), 7);
        assert_eq!(ledger.bdp_sums(), expected.as_slice());
        assert!((ledger.gamma_spent() - 7.0 * config.gamma).abs() <= 1e-18);

        let zeros = vec![0.0; bdp.len()];
        let before = ledger.guarantee(Fix::Delta(1e-8), Track::Bdp).unwrap();
        ledger.update(&zeros, &zeros).unwrap();
        let after = ledger.guarantee(Fix::Delta(1e-8), Track::Bdp).unwrap();
        assert_eq!(before.epsilon, after.epsilon);
    }

    #[test]
    fn ledger_rejects_grid_mismatch() {
        let mut ledger = PrivacyLedger::new(config_for_test()).unwrap();
        let err = ledger.update(&[0.0; 3], &[0.0; 3]).unwrap_err();
        assert!(matches!(err, AccountantError::GridMismatch { .. }));
    }

    #[test]
    fn bdp_stays_below_worst_case_under_interleaving() {
        let config = config_for_test();
        let mut ledger = PrivacyLedger::new(config.clone()).unwrap();
        let wc = worst_case_vector(&config).unwrap();
        let bdp: Vec<f64> = wc.iter().map(|w| w * 0.3).collect();
        for _ in 0..5 {
            ledger.update(&bdp, &wc).unwrap();
        }
        for (b, w) in ledger.bdp_sums().iter().zip(ledger.worst_case_sums()) {
            assert!(b <= w);
        }
        let gb = ledger.guarantee(Fix::Delta(1e-8), Track::Bdp).unwrap();
        let gw = ledger.guarantee(Fix::Delta(1e-8), Track::WorstCase).unwrap();
        assert!(gb.epsilon <= gw.epsilon);
    }

    #[test]
    fn single_order_extraction_matches_hand_arithmetic() {
        let g = extract_guarantee(&[8], &[2.0], Fix::Delta(1e-10), Track::Bdp, 0.0).unwrap();
        let expected = (2.0 - 1e-10f64.ln()) / 8.0;
        assert_eq!(g.epsilon, expected);
        assert!((g.epsilon - 3.1282).abs() < 1e-4);
        assert_eq!(g.achieving_lambda, 8);
    }

    #[test]
    fn empty_ledger_uses_largest_order() {
        let ledger = PrivacyLedger::new(AccountantConfig::new(0.5, 1.0, 1.0)).unwrap();
        let g = ledger.guarantee(Fix::Epsilon(1.0), Track::Bdp).unwrap();
        assert_eq!(g.achieving_lambda, 32);
        assert!((g.delta - (-32.0f64).exp()).abs() <= 1e-20);
    }

    #[test]
    fn added_cost_never_decreases_epsilon() {
        let config = config_for_test();
        let mut ledger = PrivacyLedger::new(config.clone()).unwrap();
        let wc = worst_case_vector(&config).unwrap();
        let mut prev = 0.0;
        for _ in 0..10 {
            ledger.update(&wc, &wc).unwrap();
            let eps = ledger.guarantee(Fix::Delta(1e-6), Track::Bdp).unwrap().epsilon;
            assert!(eps >= prev);
            prev = eps;
        }
    }

    #[test]
    fn markov_percentile_paper_case_is_exact() {
        let bound = markov_percentile(1.0, 1e-10, 1e-5).unwrap();
        assert_eq!(bound.violating_mass, 1e-5);
        assert_eq!(markov_percentile(1.0, 1e-10, 1e-3).unwrap().violating_mass, 1e-7);
        let vac = markov_percentile(2.0, 1e-4, 1e-4).unwrap();
        assert_eq!(vac.violating_mass, 1.0);
        assert!(matches!(
            markov_percentile(1.0, 1e-4, 1e-5),
            Err(AccountantError::PercentileDirection { .. })
        ));
    }

    #[test]
    fn percentile_identity_holds() {
        for p in [0.3, 0.9, 0.99, 0.123456] {
            let delta_mu = 1e-10;
            let delta_target = delta_mu / (1.0 - p);
            let mass = markov_percentile(1.0, delta_mu, delta_target)
                .unwrap()
                .violating_mass;
            assert!((mass - (1.0 - p)).abs() <= 1e-12 * (1.0 - p));
        }
    }

    #[test]
    fn guarantee_reports_paper_percentile_pair() {
        let g = extract_guarantee(&[32], &[9.0], Fix::Delta(1e-10), Track::Bdp, 1e-3).unwrap();
        let pair = g
            .percentile_pairs
            .iter()
            .find(|p| p.delta == 1e-5)
            .expect("tail pair at 1e-5");
        assert_eq!(pair.percentile, 1.0 - 1e-5);
        let wc = extract_guarantee(&[32], &[9.0], Fix::Delta(1e-10), Track::WorstCase, 0.0)
            .unwrap();
        assert!(wc.percentile_pairs.is_empty());
    }

    #[test]
    fn decimal_ratio_handles_plain_values() {
        assert_eq!(decimal_ratio(0.5, 0.5), 1.0);
        assert_eq!(decimal_ratio(1e-10, 1e-5), 1e-5);
        assert_eq!(decimal_ratio(2.5e-7, 5e-3), 5e-5);
        // Non-terminating quotients fall back to float division.
        let r = decimal_ratio(1.0, 3.0);
        assert!((r - 1.0 / 3.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn moments_monotone_in_arguments() {
        let mut rng = Streams::new(31).stream("mono");
        for _ in 0..200 {
            let lambda = 1 + (rng.random::<u32>() % 16);
            let q: f64 = rng.random::<f64>().clamp(1e-3, 1.0);
            let sigma = 0.5 + 3.0 * rng.random::<f64>();
            let d: f64 = rng.random();
            let side = if rng.random::<bool>() { Side::Left } else { Side::Right };
            let base = binomial_moment(lambda, q, sigma, d, side).unwrap();
            let more_d = binomial_moment(lambda, q, sigma, (d + 0.1).min(1.0), side).unwrap();
            assert!(more_d >= base - 1e-12);
            let more_q = binomial_moment(lambda, (q + 0.05).min(1.0), sigma, d, side).unwrap();
            assert!(more_q >= base - 1e-12);
            let more_sigma = binomial_moment(lambda, q, sigma * 1.5, d, side).unwrap();
            assert!(more_sigma <= base + 1e-12);
            let more_lambda = binomial_moment(lambda + 1, q, sigma, d, side).unwrap();
            assert!(more_lambda >= base - 1e-12);
        }
    }
}
