//! Laplace-mechanism utilities: quantile clipping, l2 sensitivity, noise
//! sampling, and recovery of the effective privacy budget from observed noise.
//!
//! Sensitivity treats a latent dataset as vectors of `n` scalar elements each
//! clipped to [a, b]; the worst-case pairwise l2 distance is then
//! `(b - a) * sqrt(n)`, attained by a pair sitting at opposite bounds in every
//! element. The mechanism adds i.i.d. Laplace(0, delta_f / epsilon) noise per
//! element. Fitting the observed perturbation with a zero-location Laplace
//! maximum-likelihood scale (the mean absolute value) and inverting the same
//! relation yields the budget a perturbation actually delivers.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Clip interval [a, b] with the quantile fractions that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds {
    pub a: f64,
    pub b: f64,
    pub q_low: f64,
    pub q_high: f64,
}

impl ClipBounds {
    #[must_use]
    pub fn width(&self) -> f64 {
        self.b - self.a
    }
}

/// Which elements count toward sensitivity's `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityCount {
    /// Every latent element (default).
    AllElements,
    /// Only elements of private codes.
    PrivateOnly,
}

/// Linear interpolation between order statistics at `q * (len - 1)`.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Empirical (q_low, q_high) quantiles over every scalar element of the
/// dataset.
pub fn compute_clip_bounds(latents: &[Array2<f64>], q_low: f64, q_high: f64) -> Result<ClipBounds> {
    if !(q_low.is_finite() && q_high.is_finite()) || q_low < 0.0 || q_high > 1.0 || q_low >= q_high {
        return Err(Error::InvalidValue {
            what: "clip quantiles".into(),
            details: format!("need 0 <= q_low < q_high <= 1, got ({q_low}, {q_high})"),
        });
    }
    let mut all: Vec<f64> = latents.iter().flat_map(|z| z.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::EmptyInput { context: "clip bounds" });
    }
    if !all.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteMetric { context: "clip bounds" });
    }
    all.sort_unstable_by(f64::total_cmp);
    Ok(ClipBounds {
        a: quantile_sorted(&all, q_low),
        b: quantile_sorted(&all, q_high),
        q_low,
        q_high,
    })
}

/// Elementwise clamp of a code matrix into the clip interval.
#[must_use]
pub fn clip_latents(z: &Array2<f64>, bounds: &ClipBounds) -> Array2<f64> {
    z.mapv(|v| v.clamp(bounds.a, bounds.b))
}

/// Worst-case pairwise l2 distance for `n` elements clipped to the interval:
/// `(b - a) * sqrt(n)`.
#[must_use]
pub fn sensitivity_closed_form(bounds: &ClipBounds, n: usize) -> f64 {
    bounds.width() * (n as f64).sqrt()
}

/// Exhaustive maximum pairwise l2 distance over the dataset.
pub fn sensitivity_bruteforce(latents: &[Array2<f64>]) -> Result<f64> {
    if latents.len() < 2 {
        return Err(Error::InvalidValue {
            what: "bruteforce sensitivity".into(),
            details: format!("need at least 2 latents, got {}", latents.len()),
        });
    }
    let mut max_sq = 0.0f64;
    for i in 0..latents.len() {
        for j in (i + 1)..latents.len() {
            if latents[i].dim() != latents[j].dim() {
                return Err(Error::DimensionMismatch {
                    context: "bruteforce sensitivity",
                    expected: format!("{:?}", latents[i].dim()),
                    got: format!("{:?}", latents[j].dim()),
                });
            }
            let sq: f64 = latents[i]
                .iter()
                .zip(latents[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            max_sq = max_sq.max(sq);
        }
    }
    Ok(max_sq.sqrt())
}

/// Privacy budget and the sensitivity it is applied against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpParams {
    pub epsilon: f64,
    pub delta_f: f64,
}

impl DpParams {
    pub fn new(epsilon: f64, delta_f: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::InvalidValue {
                what: "epsilon".into(),
                details: format!("must be finite and positive, got {epsilon}"),
            });
        }
        if !delta_f.is_finite() || delta_f < 0.0 {
            return Err(Error::InvalidValue {
                what: "delta_f".into(),
                details: format!("must be finite and nonnegative, got {delta_f}"),
            });
        }
        Ok(Self { epsilon, delta_f })
    }

    /// Laplace scale delta_f / epsilon.
    #[must_use]
    pub fn scale(&self) -> f64 {
        self.delta_f / self.epsilon
    }
}

/// Inverse-CDF Laplace(0, scale) samples:
/// `x = -scale * sgn(u) * ln(1 - 2|u|)` for `u` uniform on (-1/2, 1/2).
pub fn sample_laplace(count: usize, scale: f64, seed: u64) -> Result<Vec<f64>> {
    if !scale.is_finite() || scale < 0.0 {
        return Err(Error::InvalidValue {
            what: "laplace scale".into(),
            details: format!("must be finite and nonnegative, got {scale}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u = loop {
            let u = rng.random::<f64>() - 0.5;
            // u = -1/2 exactly would send the log to -infinity.
            if 1.0 - 2.0 * u.abs() > 0.0 {
                break u;
            }
        };
        let x = if u == 0.0 {
            0.0
        } else {
            -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        };
        out.push(x);
    }
    Ok(out)
}

/// Adds elementwise Laplace(0, delta_f / epsilon) noise to a code matrix.
pub fn apply_dp(z: &Array2<f64>, params: &DpParams, seed: u64) -> Result<Array2<f64>> {
    let noise = sample_laplace(z.len(), params.scale(), seed)?;
    let noise = Array2::from_shape_vec(z.dim(), noise).expect("count matches shape");
    Ok(z + &noise)
}

/// Zero-location Laplace fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceFit {
    /// Maximum-likelihood scale: mean absolute value of the samples.
    pub scale_hat: f64,
    pub sample_count: usize,
}

pub fn fit_laplace_scale(samples: &[f64]) -> Result<LaplaceFit> {
    if samples.is_empty() {
        return Err(Error::EmptyInput { context: "laplace fit" });
    }
    if !samples.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteMetric { context: "laplace fit" });
    }
    let scale_hat = samples.iter().map(|v| v.abs()).sum::<f64>() / samples.len() as f64;
    Ok(LaplaceFit {
        scale_hat,
        sample_count: samples.len(),
    })
}

/// Effective budget `delta_f / scale_hat` of an observed perturbation.
/// A zero fitted scale means no measurable noise; the budget is unbounded and
/// reported as positive infinity.
#[must_use]
pub fn approximate_epsilon(fit: &LaplaceFit, delta_f: f64) -> f64 {
    if fit.scale_hat == 0.0 {
        f64::INFINITY
    } else {
        delta_f / fit.scale_hat
    }
}
