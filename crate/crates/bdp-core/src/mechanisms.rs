//! Gaussian mechanism primitives: L2 clipping, noise addition, calibration,
//! and a one-dimensional privacy-loss evaluator used by tests and docs.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tensor::{l2_norm, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("clip norm must be positive, got {0}")]
    InvalidClipNorm(f64),
    #[error("noise multiplier must be nonnegative, got {0}")]
    InvalidSigma(f64),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("noise stddev must be positive, got {0}")]
    InvalidNoiseStd(f64),
}

/// Parameters of the Gaussian mechanism: clip bound `C` and the
/// dimensionless noise multiplier `sigma`. Per-coordinate noise stddev is
/// `C * sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismParams {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
}

impl MechanismParams {
    pub fn new(clip_norm: f64, noise_multiplier: f64) -> Result<Self, MechanismError> {
        if !(clip_norm > 0.0) || !clip_norm.is_finite() {
            return Err(MechanismError::InvalidClipNorm(clip_norm));
        }
        if !(noise_multiplier >= 0.0) || !noise_multiplier.is_finite() {
            return Err(MechanismError::InvalidSigma(noise_multiplier));
        }
        Ok(Self {
            clip_norm,
            noise_multiplier,
        })
    }

    pub fn noise_std(&self) -> f64 {
        self.clip_norm * self.noise_multiplier
    }
}

/// Scale `v` so its L2 norm is at most `clip_norm`: `v · min(1, C/‖v‖)`.
///
/// The bound is enforced strictly: if the rescale lands a rounding error
/// above `C`, a second pass pulls it back. No slack is added — the
/// accountant's `d ≤ C` bound relies on this being exact.
pub fn clip_to_norm(v: &Tensor, clip_norm: f64) -> Result<Tensor, MechanismError> {
    if !(clip_norm > 0.0) {
        return Err(MechanismError::InvalidClipNorm(clip_norm));
    }
    let mut out = v.clone();
    clip_in_place(out.data_mut(), clip_norm);
    Ok(out)
}

pub(crate) fn clip_in_place(v: &mut [f64], clip_norm: f64) {
    let norm = l2_norm(v);
    if norm <= clip_norm || norm == 0.0 {
        return;
    }
    let scale = clip_norm / norm;
    for x in v.iter_mut() {
        *x *= scale;
    }
    // Rounding can leave the norm an ulp above the bound; shrink strictly
    // until it is back under.
    let mut guard = 0;
    while l2_norm(v) > clip_norm && guard < 8 {
        let fix = (clip_norm / l2_norm(v)).min(1.0 - f64::EPSILON);
        for x in v.iter_mut() {
            *x *= fix;
        }
        guard += 1;
    }
    debug_assert!(l2_norm(v) <= clip_norm);
}

/// Add isotropic Gaussian noise `N(0, (C·sigma)² I)` to a clipped sum.
/// With `sigma = 0` this is the identity. Deterministic under a fixed
/// rng stream.
pub fn gaussian_mechanism<R: Rng>(
    sum: &Tensor,
    params: &MechanismParams,
    rng: &mut R,
) -> Tensor {
    if params.noise_multiplier == 0.0 {
        return sum.clone();
    }
    let std = params.noise_std();
    let mut out = sum.clone();
    for x in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x += std * z;
    }
    out
}

/// Result of noise calibration for a target `(epsilon, delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Noise multiplier (the `C = 1` sigma); multiply by the clip norm to
    /// get the absolute per-coordinate stddev.
    pub noise_multiplier: f64,
    /// Absolute per-coordinate noise stddev `C · noise_multiplier`.
    pub noise_std: f64,
    /// The classical bound is only proven for `epsilon ≤ 1`; above that the
    /// formula is still evaluated but flagged.
    pub classical_regime: bool,
}

/// Minimal noise multiplier for the Gaussian mechanism at `(epsilon, delta)`:
/// `sigma = sqrt(2·ln(1.25/delta)) / epsilon`.
///
/// The bound is valid for `epsilon ≤ 1`; larger epsilon yields a result with
/// `classical_regime = false` rather than an error.
pub fn calibrate_sigma(
    epsilon: f64,
    delta: f64,
    clip_norm: f64,
) -> Result<Calibration, MechanismError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(MechanismError::InvalidEpsilon(epsilon));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MechanismError::InvalidDelta(delta));
    }
    if !(clip_norm > 0.0) || !clip_norm.is_finite() {
        return Err(MechanismError::InvalidClipNorm(clip_norm));
    }
    let noise_multiplier = (2.0 * (1.25 / delta).ln()).sqrt() / epsilon;
    Ok(Calibration {
        noise_multiplier,
        noise_std: clip_norm * noise_multiplier,
        classical_regime: epsilon <= 1.0,
    })
}

/// Log-ratio of two Gaussian densities with common stddev at outcome `w`:
/// `log N(w; mean_a, s) − log N(w; mean_b, s)`, evaluated in log space.
pub fn privacy_loss(
    w: f64,
    mean_a: f64,
    mean_b: f64,
    noise_std: f64,
) -> Result<f64, MechanismError> {
    if !(noise_std > 0.0) {
        return Err(MechanismError::InvalidNoiseStd(noise_std));
    }
    let da = w - mean_a;
    let db = w - mean_b;
    Ok((db * db - da * da) / (2.0 * noise_std * noise_std))
}

/// Sum of `values` per coordinate plus mechanism noise, as a plain `Vec`
/// helper used by the trainers.
pub(crate) fn noised_sum<R: Rng>(
    sum: Vec<f64>,
    params: &MechanismParams,
    rng: &mut R,
) -> Vec<f64> {
    if params.noise_multiplier == 0.0 {
        return sum;
    }
    let std = params.noise_std();
    let mut out = sum;
    for x in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x += std * z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use alloc::vec;

    #[test]
    fn clip_rescales_norm_five_vector() {
        let v = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let c = clip_to_norm(&v, 1.0).unwrap();
        assert!((c.data()[0] - 0.6).abs() <= 1e-15);
        assert!((c.data()[1] - 0.8).abs() <= 1e-15);
    }

    #[test]
    fn clip_leaves_short_vectors_and_zero_untouched() {
        let v = Tensor::new(vec![3], vec![0.1, -0.2, 0.05]).unwrap();
        assert_eq!(clip_to_norm(&v, 1.0).unwrap().data(), v.data());
        let zero = Tensor::zeros(vec![4]).unwrap();
        assert_eq!(clip_to_norm(&zero, 0.5).unwrap().data(), zero.data());
    }

    #[test]
    fn clip_is_idempotent_and_homogeneous() {
        let streams = Streams::new(5);
        let mut rng = streams.stream("clip");
        for _ in 0..50 {
            let data: Vec<f64> = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect();
            let v = Tensor::new(vec![8], data).unwrap();
            let once = clip_to_norm(&v, 0.7).unwrap();
            let twice = clip_to_norm(&once, 0.7).unwrap();
            assert_eq!(once.data(), twice.data());
            assert!(once.l2_norm() <= 0.7);

            // Positive homogeneity in C: clip(v, aC) == a·clip(v, C) for ‖v‖ ≥ aC.
            let big = clip_to_norm(&v, 1.4).unwrap();
            if v.l2_norm() >= 1.4 {
                for (a, b) in big.data().iter().zip(once.data().iter()) {
                    assert!((a - 2.0 * b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_sigma_mechanism_is_identity() {
        let sum = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let params = MechanismParams::new(1.0, 0.0).unwrap();
        let mut rng = Streams::new(0).stream("noise");
        assert_eq!(gaussian_mechanism(&sum, &params, &mut rng).data(), sum.data());
    }

    #[test]
    fn mechanism_is_deterministic_under_fixed_stream() {
        let sum = Tensor::zeros(vec![6]).unwrap();
        let params = MechanismParams::new(2.0, 1.5).unwrap();
        let a = gaussian_mechanism(&sum, &params, &mut Streams::new(1).stream("noise"));
        let b = gaussian_mechanism(&sum, &params, &mut Streams::new(1).stream("noise"));
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn calibration_matches_formula() {
        let cal = calibrate_sigma(1.0, 1e-5, 1.0).unwrap();
        assert!((cal.noise_multiplier - 4.84480).abs() < 1e-5);
        assert!(cal.classical_regime);

        let half = calibrate_sigma(0.5, 1e-5, 1.0).unwrap();
        assert!((half.noise_multiplier - 2.0 * cal.noise_multiplier).abs() <= 1e-12);

        let wide = calibrate_sigma(4.0, 1e-5, 1.0).unwrap();
        assert!(!wide.classical_regime);

        assert!(matches!(
            calibrate_sigma(1.0, 1.25, 1.0),
            Err(MechanismError::InvalidDelta(_))
        ));
    }

    #[test]
    fn privacy_loss_one_dimensional_cases() {
        assert_eq!(privacy_loss(0.7, 0.3, 0.3, 1.0).unwrap(), 0.0);
        // Midway between the means.
        assert!(privacy_loss(0.5, 0.0, 1.0, 2.0).unwrap().abs() <= 1e-15);
        // Hand-derived: (s² − 2ws)/(2σ²) at w=0, a=0, b=1, σ=1 gives 1/2.
        assert!((privacy_loss(0.0, 0.0, 1.0, 1.0).unwrap() - 0.5).abs() <= 1e-15);
        // Antisymmetry.
        let ab = privacy_loss(0.3, -0.2, 0.9, 0.7).unwrap();
        let ba = privacy_loss(0.3, 0.9, -0.2, 0.7).unwrap();
        assert!((ab + ba).abs() <= 1e-15);
    }
}
