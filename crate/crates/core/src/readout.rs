//! Photoluminescence shot noise, two-point normalization, the differential
//! effective-field estimator and the sensitivity figure.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::rng::SeedTree;
use crate::spindyn::Constants;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReadoutError {
    #[error("invalid readout configuration: {0}")]
    InvalidConfig(String),
    #[error("population {0} outside [0, 1]")]
    PopulationOutOfRange(f64),
    #[error("normalization references are degenerate (ref0 = {ref0}, ref1 = {ref1})")]
    DegenerateReference { ref0: f64, ref1: f64 },
    #[error("estimator input invalid: {0}")]
    InvalidEstimate(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutConfig {
    /// Mean detected photons per shot from `|0⟩`.
    pub photons_per_shot: f64,
    /// Fractional PL drop from `|0⟩` to `|1⟩`.
    pub contrast: f64,
    pub shots: u64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self { photons_per_shot: 10_000.0, contrast: 0.05, shots: 10_000 }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        if !(self.photons_per_shot > 0.0 && self.photons_per_shot.is_finite()) {
            return Err(ReadoutError::InvalidConfig(format!(
                "photons per shot must be positive, got {}",
                self.photons_per_shot
            )));
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(ReadoutError::InvalidConfig(format!("contrast {} outside (0, 1)", self.contrast)));
        }
        if self.shots == 0 {
            return Err(ReadoutError::InvalidConfig("shots must be at least 1".into()));
        }
        Ok(())
    }

    /// Mean counts of one shot.
    pub fn mean_counts(&self, p1: f64) -> f64 {
        self.photons_per_shot * (1.0 - self.contrast * p1)
    }

    /// Mean counts summed over `shots`.
    pub fn mean_total_counts(&self, p1: f64) -> f64 {
        self.shots as f64 * self.mean_counts(p1)
    }

    pub fn with_shots(self, shots: u64) -> Self {
        Self { shots, ..self }
    }
}

fn check_population(p1: f64) -> Result<(), ReadoutError> {
    if (0.0..=1.0).contains(&p1) {
        Ok(())
    } else {
        Err(ReadoutError::PopulationOutOfRange(p1))
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map_or(0, |d| d.sample(rng) as u64)
}

/// Counts of a single shot at population `p1`.
pub fn photon_counts(p1: f64, cfg: &ReadoutConfig, seed: u64) -> Result<u64, ReadoutError> {
    cfg.validate()?;
    check_population(p1)?;
    Ok(poisson(cfg.mean_counts(p1), &mut SeedTree::new(seed).rng()))
}

/// Counts summed over `cfg.shots` shots (a single Poisson draw of the total).
pub fn total_counts<R: Rng + ?Sized>(p1: f64, cfg: &ReadoutConfig, rng: &mut R) -> Result<u64, ReadoutError> {
    cfg.validate()?;
    check_population(p1)?;
    Ok(poisson(cfg.mean_total_counts(p1), rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub value: f64,
    pub clamped: bool,
}

const NORMALIZED_RANGE: (f64, f64) = (-0.5, 1.5);

/// `p̂₁ = (ref₀ − counts)/(ref₀ − ref₁)`, clamped to `[−0.5, 1.5]`.
pub fn normalize_signal(counts: f64, ref0: f64, ref1: f64) -> Result<Normalized, ReadoutError> {
    let den = ref0 - ref1;
    if den == 0.0 || !den.is_finite() {
        return Err(ReadoutError::DegenerateReference { ref0, ref1 });
    }
    let raw = (ref0 - counts) / den;
    let value = raw.clamp(NORMALIZED_RANGE.0, NORMALIZED_RANGE.1);
    Ok(Normalized { value, clamped: value != raw })
}

/// Shot-noise standard error of [`normalize_signal`] with Poisson counts
/// and Poisson references.
pub fn normalized_std_error(counts: f64, ref0: f64, ref1: f64) -> Result<f64, ReadoutError> {
    let den = ref0 - ref1;
    if den == 0.0 || !den.is_finite() {
        return Err(ReadoutError::DegenerateReference { ref0, ref1 });
    }
    let p = (ref0 - counts) / den;
    Ok((counts + (1.0 - p).powi(2) * ref0 + p * p * ref1).sqrt() / den.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeffEstimate {
    /// Estimated field (T).
    pub field: f64,
    /// Estimated phase (rad).
    pub phase: f64,
    /// The asin argument was clamped.
    pub saturated: bool,
}

/// Differential estimate from the two single-half signals and the calibrated
/// amplitude `A` of the phase response.
pub fn estimate_beff(
    s_first: f64,
    s_second: f64,
    t0: f64,
    amplitude: f64,
    constants: &Constants,
) -> Result<BeffEstimate, ReadoutError> {
    if !(t0 > 0.0) {
        return Err(ReadoutError::InvalidEstimate(format!("T0 must be positive, got {t0}")));
    }
    if !(amplitude > 0.0) {
        return Err(ReadoutError::InvalidEstimate(format!("amplitude must be positive, got {amplitude}")));
    }
    let raw = (s_second - s_first) / (2.0 * amplitude);
    if raw.is_nan() {
        return Err(ReadoutError::InvalidEstimate("signals are not finite".into()));
    }
    let arg = raw.clamp(-1.0, 1.0);
    let phase = arg.asin();
    Ok(BeffEstimate {
        field: phase / (2.0 * PI * constants.gamma_nv * t0),
        phase,
        saturated: arg != raw,
    })
}

/// Ratio `(K₁ − K₂)/(K₊ₓ − K₋ₓ)` of raw counts and its shot-noise standard
/// error. With shared references this equals `(s₂ − s₁)/(2A)`.
pub fn differential_ratio(
    k_first: f64,
    k_second: f64,
    k_plus_x: f64,
    k_minus_x: f64,
) -> Result<(f64, f64), ReadoutError> {
    let den = k_plus_x - k_minus_x;
    if den == 0.0 || !den.is_finite() {
        return Err(ReadoutError::DegenerateReference { ref0: k_plus_x, ref1: k_minus_x });
    }
    let r = (k_first - k_second) / den;
    let var = ((k_first + k_second) + r * r * (k_plus_x + k_minus_x)) / (den * den);
    Ok((r, var.sqrt()))
}

/// Shot-noise limited sensitivity (T/√Hz).
pub fn sensitivity(t2: f64, cfg: &ReadoutConfig, constants: &Constants) -> Result<f64, ReadoutError> {
    cfg.validate()?;
    if !(t2 > 0.0 && t2.is_finite()) {
        return Err(ReadoutError::InvalidEstimate(format!("T2 must be positive, got {t2}")));
    }
    Ok(1.0 / (2.0 * PI * constants.gamma_nv * cfg.contrast * (cfg.photons_per_shot * t2).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_means() {
        let cfg = ReadoutConfig::default();
        assert_eq!(cfg.mean_counts(0.0), cfg.photons_per_shot);
        assert_eq!(cfg.mean_counts(1.0), cfg.photons_per_shot * (1.0 - cfg.contrast));
        assert!(photon_counts(1.2, &cfg, 0).is_err());
    }

    #[test]
    fn poisson_sample_mean() {
        let cfg = ReadoutConfig { photons_per_shot: 1000.0, ..Default::default() };
        let mean = cfg.mean_counts(0.3);
        let n = 100_000u64;
        let mut rng = SeedTree::new(5).rng();
        let sum: u64 = (0..n).map(|_| poisson(mean, &mut rng)).sum();
        let avg = sum as f64 / n as f64;
        assert!((avg - mean).abs() < 3.0 * (mean / n as f64).sqrt(), "{avg} vs {mean}");
    }

    #[test]
    fn photon_counts_reproducible() {
        let cfg = ReadoutConfig::default();
        assert_eq!(photon_counts(0.4, &cfg, 77).unwrap(), photon_counts(0.4, &cfg, 77).unwrap());
    }

    #[test]
    fn normalization_points() {
        assert_eq!(normalize_signal(1000.0, 1000.0, 950.0).unwrap().value, 0.0);
        assert_eq!(normalize_signal(950.0, 1000.0, 950.0).unwrap().value, 1.0);
        assert_eq!(normalize_signal(975.0, 1000.0, 950.0).unwrap().value, 0.5);
        let c = normalize_signal(800.0, 1000.0, 950.0).unwrap();
        assert!(c.clamped && c.value == 1.5);
        assert!(matches!(normalize_signal(1.0, 5.0, 5.0), Err(ReadoutError::DegenerateReference { .. })));
    }

    #[test]
    fn estimator_basics() {
        let k = Constants::default();
        let z = estimate_beff(0.4, 0.4, 21e-6, 0.4, &k).unwrap();
        assert_eq!(z.field, 0.0);
        let a = estimate_beff(0.45, 0.55, 21e-6, 0.4, &k).unwrap();
        let b = estimate_beff(0.55, 0.45, 21e-6, 0.4, &k).unwrap();
        assert_eq!(a.field, -b.field);
        assert!(a.field > 0.0 && !a.saturated);
        assert!(estimate_beff(0.0, 1.0, 21e-6, 0.4, &k).unwrap().saturated);
        assert!(estimate_beff(0.0, 1.0, 0.0, 0.4, &k).is_err());
    }

    #[test]
    fn ratio_matches_normalized_difference() {
        let (r0, r1) = (1.0e8, 0.95e8);
        let (k1, k2, kp, km) = (0.9800e8, 0.9700e8, 0.9900e8, 0.9600e8);
        let p = |k: f64| normalize_signal(k, r0, r1).unwrap().value;
        let (r, se) = differential_ratio(k1, k2, kp, km).unwrap();
        assert!((r - (p(k2) - p(k1)) / (p(km) - p(kp))).abs() < 1e-12);
        assert!(se > 0.0);
    }

    #[test]
    fn sensitivity_scaling() {
        let k = Constants::default();
        let cfg = ReadoutConfig::default();
        let base = sensitivity(100e-6, &cfg, &k).unwrap();
        assert_eq!(sensitivity(400e-6, &cfg, &k).unwrap() / base, 0.5);
        let more = ReadoutConfig { photons_per_shot: 4.0 * cfg.photons_per_shot, ..cfg };
        assert_eq!(sensitivity(100e-6, &more, &k).unwrap() / base, 0.5);
        let nt = base * 1e9;
        assert!(nt.is_finite() && nt > 0.0);
    }

    proptest! {
        #[test]
        fn estimator_is_odd(a in 0.0..1.0f64, b in 0.0..1.0f64, amp in 0.05..1.0f64) {
            let k = Constants::default();
            let x = estimate_beff(a, b, 10e-6, amp, &k).unwrap().field;
            let y = estimate_beff(b, a, 10e-6, amp, &k).unwrap().field;
            prop_assert_eq!(x, -y);
        }
    }
}
