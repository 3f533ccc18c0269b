//! Complex AWGN channel with per-vector power normalization.
//!
//! Real vectors are packed into complex symbols (consecutive pairs of reals),
//! scaled to a mean symbol power budget, perturbed by circular Gaussian noise
//! of variance `sigma^2 = power / 10^(snr_db / 10)` per symbol, and scaled
//! back with the true gain, which the legitimate parties share out of band.
//! Odd-length vectors are padded with one zero that is stripped again after
//! the channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub snr_db: f64,
    /// Mean power budget per complex symbol.
    pub power: f64,
    /// Base seed; callers derive per-use seeds from it.
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            power: 1.0,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    /// Noise variance per complex symbol.
    #[must_use]
    pub fn sigma2(&self) -> f64 {
        self.power / 10f64.powf(self.snr_db / 10.0)
    }
}

/// Number of complex symbols carrying `len` reals; an odd tail counts as a
/// zero-padded symbol.
fn symbol_count(len: usize) -> usize {
    len.div_ceil(2)
}

/// Scales `v` so its mean power per complex symbol equals `power`. Returns the
/// scaled vector and the gain applied, so a receiver can divide it back out.
pub fn power_normalize(v: &[f64], power: f64) -> Result<(Vec<f64>, f64)> {
    if v.is_empty() {
        return Err(Error::EmptyInput { context: "power normalization" });
    }
    if !power.is_finite() || power <= 0.0 {
        return Err(Error::InvalidValue {
            what: "power".into(),
            details: format!("must be finite and positive, got {power}"),
        });
    }
    let sum_sq: f64 = v.iter().map(|x| x * x).sum();
    if !sum_sq.is_finite() {
        return Err(Error::NonFiniteMetric { context: "power normalization" });
    }
    if sum_sq == 0.0 {
        return Err(Error::InvalidValue {
            what: "power normalization input".into(),
            details: "zero vector has no power to normalize".into(),
        });
    }
    let mean_symbol_power = sum_sq / symbol_count(v.len()) as f64;
    let gain = (power / mean_symbol_power).sqrt();
    Ok((v.iter().map(|x| x * gain).collect(), gain))
}

/// Full channel: normalize, add complex AWGN at the configured SNR, undo the
/// gain. With zero noise variance this is the identity to rounding error.
pub fn transmit(z2: &[f64], cfg: &ChannelConfig, rng_seed: u64) -> Result<Vec<f64>> {
    let sigma2 = cfg.sigma2();
    if !sigma2.is_finite() && sigma2 != 0.0 {
        // 10^(snr/10) underflowed; the noise would be infinite.
        return Err(Error::InvalidValue {
            what: "snr_db".into(),
            details: format!("noise variance is not finite at snr {} dB", cfg.snr_db),
        });
    }
    let (mut sent, gain) = power_normalize(z2, cfg.power)?;
    let odd = z2.len() % 2 == 1;
    if odd {
        sent.push(0.0);
    }
    if sigma2 > 0.0 {
        // Circular complex noise: variance sigma^2 / 2 per real component.
        let normal = Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for x in sent.iter_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    if odd {
        sent.pop();
    }
    Ok(sent.into_iter().map(|x| x / gain).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn sigma2_follows_snr() {
        let cfg = ChannelConfig { snr_db: 20.0, power: 1.0, seed: 0 };
        assert!((cfg.sigma2() - 0.01).abs() < 1e-15);
        let cfg = ChannelConfig { snr_db: 0.0, power: 2.0, seed: 0 };
        assert!((cfg.sigma2() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_power_input_keeps_gain_one() {
        // Each symbol (pair of reals) has power 1.
        let v = vec![std::f64::consts::FRAC_1_SQRT_2; 8];
        let (out, gain) = power_normalize(&v, 1.0).unwrap();
        assert!((gain - 1.0).abs() < 1e-12);
        for (a, b) in v.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_inverts_scalar_gain() {
        let unit: Vec<f64> = vec![std::f64::consts::FRAC_1_SQRT_2; 16];
        let scaled: Vec<f64> = unit.iter().map(|x| x * 3.0).collect();
        let (_, gain) = power_normalize(&scaled, 1.0).unwrap();
        assert!((gain - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_power_hits_budget() {
        let v: Vec<f64> = (0..1000).map(|i| ((i as f64) * 0.37).sin() * 4.2).collect();
        for &p in &[0.5, 1.0, 7.0] {
            let (out, _) = power_normalize(&v, p).unwrap();
            let measured = out.iter().map(|x| x * x).sum::<f64>() / symbol_count(out.len()) as f64;
            assert!((measured - p).abs() < 1e-12 * p.max(1.0));
        }
    }

    #[test]
    fn normalize_then_denormalize_is_identity() {
        let v: Vec<f64> = (0..33).map(|i| (i as f64 - 16.0) * 0.3).collect();
        let (out, gain) = power_normalize(&v, 1.0).unwrap();
        for (orig, sent) in v.iter().zip(&out) {
            assert!((sent / gain - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_degenerate_input() {
        assert!(power_normalize(&[], 1.0).is_err());
        assert!(power_normalize(&[0.0, 0.0], 1.0).is_err());
        assert!(power_normalize(&[1.0], 0.0).is_err());
        assert!(power_normalize(&[1.0], -2.0).is_err());
    }

    #[test]
    fn zero_noise_channel_is_identity() {
        let cfg = ChannelConfig { snr_db: f64::INFINITY, power: 1.0, seed: 0 };
        assert_eq!(cfg.sigma2(), 0.0);
        let v: Vec<f64> = (0..64).map(|i| ((i * i) as f64 * 0.01).cos()).collect();
        let y = transmit(&v, &cfg, 9).unwrap();
        for (a, b) in v.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transmit_is_seeded_and_streams_differ() {
        let cfg = ChannelConfig::default();
        let v: Vec<f64> = (0..128).map(|i| (i as f64 * 0.1).sin()).collect();
        let a = transmit(&v, &cfg, 100).unwrap();
        let b = transmit(&v, &cfg, 100).unwrap();
        let c = transmit(&v, &cfg, 101).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn odd_length_survives_padding() {
        let cfg = ChannelConfig { snr_db: f64::INFINITY, power: 1.0, seed: 0 };
        let v = vec![0.4, -1.0, 2.5, 0.1, -0.7];
        let y = transmit(&v, &cfg, 0).unwrap();
        assert_eq!(y.len(), 5);
        for (a, b) in v.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_snr_matches_configured() {
        let cfg = ChannelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..2_000_000).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y = transmit(&v, &cfg, 17).unwrap();
        let sig: f64 = v.iter().map(|x| x * x).sum();
        let noise: f64 = v.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr_db = 10.0 * (sig / noise).log10();
        assert!((snr_db - 20.0).abs() < 0.2, "empirical snr {snr_db} dB");
    }

    #[test]
    fn noise_components_are_circular() {
        // Per-real-component variance sigma^2/2, no real/imag correlation.
        let cfg = ChannelConfig { snr_db: 0.0, power: 1.0, seed: 0 };
        let v = vec![std::f64::consts::FRAC_1_SQRT_2; 400_000];
        let y = transmit(&v, &cfg, 23).unwrap();
        let noise: Vec<f64> = v.iter().zip(&y).map(|(a, b)| b - a).collect();
        let half = cfg.sigma2() / 2.0;
        let (mut v_re, mut v_im, mut cross) = (0.0, 0.0, 0.0);
        let symbols = noise.len() / 2;
        for s in 0..symbols {
            let (re, im) = (noise[2 * s], noise[2 * s + 1]);
            v_re += re * re;
            v_im += im * im;
            cross += re * im;
        }
        v_re /= symbols as f64;
        v_im /= symbols as f64;
        cross /= symbols as f64;
        assert!((v_re - half).abs() < 0.02 * half, "re variance {v_re}");
        assert!((v_im - half).abs() < 0.02 * half, "im variance {v_im}");
        assert!(cross.abs() < 0.02 * half, "cross correlation {cross}");
    }
}
