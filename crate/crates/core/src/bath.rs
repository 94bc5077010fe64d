//! Decoherence models: inhomogeneous broadening, slow background noise, the
//! stretched-exponential echo envelope and the carbon-13 collapse/revival
//! modulation.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::SeedTree;
use crate::spindyn::Constants;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BathError {
    #[error("invalid bath configuration: {0}")]
    InvalidConfig(String),
    #[error("time step must be positive, got {0} s")]
    NonPositiveStep(f64),
    #[error("path length must be at least 1")]
    EmptyPath,
}

/// Spin-bath and coherence parameters of the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BathConfig {
    /// Inhomogeneous dephasing time (s).
    pub t2_star: f64,
    /// Echo coherence time (s).
    pub t2: f64,
    /// Stretch exponent of the echo envelope.
    pub stretch: f64,
    /// Bias field along the NV axes (T).
    pub bias_field: f64,
    /// Number of bath spins in the pseudo-spin model.
    pub spin_count: usize,
    /// Largest hyperfine shift `|ω_j − ω_L|` (rad/s).
    pub hyperfine_max: f64,
    /// Largest modulation depth `k_j`.
    pub contrast_max: f64,
    pub seed: u64,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            t2_star: 2e-6,
            t2: 100e-6,
            stretch: 2.0,
            bias_field: 4.45e-3,
            spin_count: 8,
            hyperfine_max: 2.0 * PI * 150e3,
            contrast_max: 0.5,
            seed: 0x13C,
        }
    }
}

impl BathConfig {
    pub fn validate(&self) -> Result<(), BathError> {
        let bad = |m: String| Err(BathError::InvalidConfig(m));
        if !(self.t2_star > 0.0) {
            return bad(format!("T2* must be positive, got {}", self.t2_star));
        }
        if !(self.t2 > self.t2_star) || !self.t2.is_finite() {
            return bad(format!("T2 ({}) must exceed T2* ({})", self.t2, self.t2_star));
        }
        if !(1.0..=3.0).contains(&self.stretch) {
            return bad(format!("stretch exponent {} outside [1, 3]", self.stretch));
        }
        if !self.bias_field.is_finite() || self.bias_field <= 0.0 {
            return bad(format!("bias field must be positive, got {}", self.bias_field));
        }
        if !(self.hyperfine_max > 0.0 && self.hyperfine_max.is_finite()) {
            return bad(format!("hyperfine scale must be positive, got {}", self.hyperfine_max));
        }
        if !(0.0..=1.0).contains(&self.contrast_max) {
            return bad(format!("contrast_max {} outside [0, 1]", self.contrast_max));
        }
        Ok(())
    }

    /// Carbon-13 Larmor frequency (rad/s).
    pub fn larmor(&self, constants: &Constants) -> f64 {
        2.0 * PI * constants.gamma_c13 * self.bias_field
    }

    /// Spacing of echo revivals in `τ` (s).
    pub fn revival_period(&self, constants: &Constants) -> f64 {
        1.0 / (constants.gamma_c13 * self.bias_field)
    }

    /// Bias field that places the `k`-th revival at `tau`.
    pub fn bias_for_revival(tau: f64, k: u32, constants: &Constants) -> f64 {
        k as f64 / (constants.gamma_c13 * tau)
    }

    /// Draws the bath couplings from `seed`.
    pub fn realize(&self, constants: &Constants) -> SpinBath {
        let larmor = self.larmor(constants);
        let mut rng = SeedTree::new(self.seed).rng();
        let spins = (0..self.spin_count)
            .map(|_| {
                let shift = (1.0 - rng.random::<f64>()) * self.hyperfine_max;
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let contrast = (1.0 - rng.random::<f64>()) * self.contrast_max;
                BathSpin { omega: larmor + sign * shift, contrast }
            })
            .collect();
        SpinBath { larmor, spins }
    }

    /// Standard deviation of the inhomogeneous detuning (rad/s).
    pub fn detuning_sigma(&self) -> f64 {
        inhomogeneous_sigma(self.t2_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathSpin {
    /// Precession frequency with the electron in `m_s = −1` (rad/s).
    pub omega: f64,
    pub contrast: f64,
}

/// One realization of the carbon-13 pseudo-spin bath.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinBath {
    pub larmor: f64,
    pub spins: Vec<BathSpin>,
}

impl SpinBath {
    /// `Π_j [1 − k_j·sin²(ω_L τ/2)·sin²(ω_j τ/2)]`.
    pub fn modulation(&self, tau: f64) -> f64 {
        let bare = (0.5 * self.larmor * tau).sin().powi(2);
        self.spins
            .iter()
            .map(|s| 1.0 - s.contrast * bare * (0.5 * s.omega * tau).sin().powi(2))
            .product()
    }
}

/// Echo modulation at half-echo time `tau` for the bath drawn from `cfg`.
pub fn echo_bath_modulation(tau: f64, cfg: &BathConfig, constants: &Constants) -> f64 {
    cfg.realize(constants).modulation(tau)
}

/// Stretched-exponential echo envelope `exp(−(2τ/T₂)^p)`.
pub fn echo_envelope(tau: f64, t2: f64, stretch: f64) -> f64 {
    (-(2.0 * tau / t2).powf(stretch)).exp()
}

/// `σ_δ = √2/T₂*`, so that `⟨cos δt⟩ = exp(−(t/T₂*)²)`.
pub fn inhomogeneous_sigma(t2_star: f64) -> f64 {
    std::f64::consts::SQRT_2 / t2_star
}

pub fn sample_inhomogeneous_detuning<R: Rng + ?Sized>(t2_star: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    inhomogeneous_sigma(t2_star) * z
}

pub fn sample_inhomogeneous_detuning_seeded(t2_star: f64, seed: u64) -> f64 {
    sample_inhomogeneous_detuning(t2_star, &mut SeedTree::new(seed).rng())
}

/// Ornstein–Uhlenbeck frequency noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuConfig {
    /// Stationary standard deviation (rad/s).
    pub sigma: f64,
    /// Correlation time (s).
    pub tau_c: f64,
    pub seed: u64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0 * PI * 500.0,
            tau_c: 1e-3,
            seed: 0x0E,
        }
    }
}

impl OuConfig {
    pub fn validate(&self) -> Result<(), BathError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(BathError::InvalidConfig(format!("OU sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.tau_c > 0.0) {
            return Err(BathError::InvalidConfig(format!(
                "OU correlation time must be positive, got {}",
                self.tau_c
            )));
        }
        Ok(())
    }

    /// Variance of `∫x dt` over an interval of length `len`, stationary start.
    pub fn integral_variance(&self, len: f64) -> f64 {
        let u = len / self.tau_c;
        // u − 1 + e^{−u}
        let g = if u < 0.1 {
            series(u, 2, |n| if n % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            u + (-u).exp_m1()
        };
        2.0 * self.sigma * self.sigma * self.tau_c * self.tau_c * g
    }

    /// Covariance of the integrals over `[0, a]` and `[a + gap, a + gap + b]`.
    pub fn integral_covariance(&self, a: f64, gap: f64, b: f64) -> f64 {
        let tc = self.tau_c;
        self.sigma * self.sigma * tc * tc
            * (-gap / tc).exp()
            * -(-a / tc).exp_m1()
            * -(-b / tc).exp_m1()
    }
}

/// `Σ_{n ≥ start} coef(n)·u^n/n!`, for small `u`.
fn series(u: f64, start: i32, coef: impl Fn(i32) -> f64) -> f64 {
    let mut term = 1.0;
    for n in 1..start {
        term *= u / n as f64;
    }
    let mut sum = 0.0;
    for n in start..start + 24 {
        term *= u / n as f64;
        sum += coef(n) * term;
    }
    sum
}

/// Stateful OU process with the exact discretization.
#[derive(Debug, Clone)]
pub struct OuProcess {
    sigma: f64,
    tau_c: f64,
    x: f64,
}

impl OuProcess {
    /// Starts from a stationary draw `x₀ ~ N(0, σ²)`.
    pub fn stationary<R: Rng + ?Sized>(cfg: &OuConfig, rng: &mut R) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        Self { sigma: cfg.sigma, tau_c: cfg.tau_c, x: cfg.sigma * z }
    }

    pub fn value(&self) -> f64 {
        self.x
    }

    /// `x ← x·e^{−dt/τ_c} + σ·√(1 − e^{−2dt/τ_c})·ξ`.
    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        let a = (-dt / self.tau_c).exp();
        let sd = self.sigma * (-(-2.0 * dt / self.tau_c).exp_m1()).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        self.x = self.x * a + sd * z;
        self.x
    }

    /// Advances by `dt` and returns `∫x dt` over the step, sampled jointly
    /// with the end point from their exact conditional Gaussian law.
    pub fn advance_integrated<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        let tc = self.tau_c;
        let s2 = self.sigma * self.sigma;
        let u = dt / tc;
        let b = -(-u).exp_m1(); // 1 − e^{−u}
        let var_x = s2 * -(-2.0 * u).exp_m1();
        // 2u − 3 + 4e^{−u} − e^{−2u}
        let h = if u < 0.1 {
            series(u, 3, |n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign * (4.0 - 2f64.powi(n))
            })
        } else {
            2.0 * u - 2.0 * b - b * b
        };
        let var_i = s2 * tc * tc * h;
        let cov = s2 * tc * b * b;
        let mean_x = self.x * (1.0 - b);
        let mean_i = self.x * tc * b;

        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        if var_x <= 0.0 {
            self.x = mean_x;
            return mean_i;
        }
        let l11 = var_x.sqrt();
        let l21 = cov / l11;
        let l22 = (var_i - l21 * l21).max(0.0).sqrt();
        self.x = mean_x + l11 * z1;
        mean_i + l21 * z1 + l22 * z2
    }
}

/// Stationary OU path of `n` samples spaced by `dt`, seeded from `cfg.seed`.
pub fn ou_sample_path(cfg: &OuConfig, dt: f64, n: usize) -> Result<Vec<f64>, BathError> {
    cfg.validate()?;
    if !(dt > 0.0) {
        return Err(BathError::NonPositiveStep(dt));
    }
    if n == 0 {
        return Err(BathError::EmptyPath);
    }
    let mut rng = SeedTree::new(cfg.seed).rng();
    let mut p = OuProcess::stationary(cfg, &mut rng);
    let mut out = Vec::with_capacity(n);
    out.push(p.value());
    for _ in 1..n {
        out.push(p.advance(dt, &mut rng));
    }
    Ok(out)
}
