use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use super::sequence::{overlap, validate, ElementKind, Sequence, SequenceKind, Violation};
use crate::bath::{
    echo_envelope, sample_inhomogeneous_detuning, BathConfig, BathError, OuConfig, OuProcess,
    SpinBath,
};
use crate::optics::{absorption_rate, effective_field, EffectiveFieldModel, OpticsError};
use crate::rng::{SeedTree, SimRng};
use crate::spindyn::{rotate_unit, rotate_z, BlochState, Constants};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid sequence: {0:?}")]
    InvalidSequence(Vec<Violation>),
    #[error("shot count must be at least 1")]
    NoShots,
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineMode {
    /// Closed-form noise averages; deterministic.
    Analytic,
    /// Per-shot sampling of detuning and background noise.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: EngineMode,
    pub shots: u64,
    pub seed: u64,
    pub bath: BathConfig,
    pub ou: OuConfig,
    pub field_model: EffectiveFieldModel,
    pub constants: Constants,
    /// Sample temperature (K).
    pub temperature: f64,
    /// Requested standard error of `p₁`; only reported against.
    pub target_std_error: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: EngineMode::Analytic,
            shots: 10_000,
            seed: 0,
            bath: BathConfig::default(),
            ou: OuConfig::default(),
            field_model: EffectiveFieldModel::default(),
            constants: Constants::default(),
            temperature: 295.0,
            target_std_error: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.shots == 0 {
            return Err(EngineError::NoShots);
        }
        self.bath.validate()?;
        self.ou.validate()?;
        self.field_model.validate()?;
        Ok(())
    }

    pub fn with_mode(&self, mode: EngineMode) -> Self {
        Self { mode, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutExpectation {
    pub p1: f64,
    /// Standard error of `p1` over shots; zero in analytic mode.
    pub std_error: f64,
    pub shots: u64,
    pub target_met: bool,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Init,
    Pulse { omega: f64, phase: f64, duration: f64, spread: bool },
    Free { duration: f64, psd_phase: f64, gap: f64 },
    Decohere { factor: f64 },
}

/// Sequence lowered to spin operations, with the deterministic factors
/// already folded in.
struct Plan {
    steps: Vec<Step>,
    /// Closed-form phase variance of the noise the Monte Carlo mode samples.
    phase_variance: f64,
}

fn is_pi(angle: f64) -> bool {
    (angle - PI).abs() <= 1e-9 * PI
}

fn lower(seq: &Sequence, cfg: &SimConfig, bath: &SpinBath) -> Result<Plan, EngineError> {
    let els = seq.elements();
    let spread = seq.kind() == SequenceKind::Rabi;

    let mut psd = Vec::new();
    let mut absorbed = 0.0;
    for e in els {
        if let ElementKind::Psd { beam } = e.kind {
            let field = effective_field(&beam, &cfg.field_model)?;
            absorbed += absorption_rate(&beam, &cfg.field_model, cfg.temperature)? * e.duration;
            psd.push((e, field));
        }
    }

    let mut steps = Vec::new();
    let mut last_wait = None;
    let mut free_time = 0.0;
    // (sign, start, duration) of each free period, for the noise variance
    let mut waits: Vec<(f64, f64, f64)> = Vec::new();
    let mut sign = 1.0;
    let mut prev_end: Option<f64> = None;
    for e in els {
        match e.kind {
            ElementKind::LaserInit => steps.push(Step::Init),
            ElementKind::Mw { omega, phase } => {
                steps.push(Step::Pulse { omega, phase, duration: e.duration, spread });
                if is_pi(omega * e.duration) {
                    sign = -sign;
                }
            }
            ElementKind::Wait => {
                let psd_phase = psd
                    .iter()
                    .map(|(p, field)| cfg.constants.nv_phase(*field, overlap(p, e)))
                    .sum();
                let gap = prev_end.map_or(0.0, |t| (e.start - t).max(0.0));
                prev_end = Some(e.end());
                steps.push(Step::Free { duration: e.duration, psd_phase, gap });
                waits.push((sign, e.start, e.duration));
                free_time += e.duration;
                last_wait = Some(steps.len());
            }
            ElementKind::Psd { .. } | ElementKind::Readout => {}
        }
    }

    let mut phase_variance = 0.0;
    if let Some(at) = last_wait {
        let (envelope, modulation) = match seq.echo_halves() {
            Some((t1, t2)) => (echo_envelope(0.5 * (t1 + t2), cfg.bath.t2, cfg.bath.stretch), bath.modulation(t1)),
            None => (echo_envelope(0.5 * free_time, cfg.bath.t2, cfg.bath.stretch), 1.0),
        };
        let factor = envelope * modulation * (-absorbed).exp();
        steps.insert(at, Step::Decohere { factor });

        let sigma = cfg.bath.detuning_sigma();
        let static_lever: f64 = waits.iter().map(|(s, _, d)| s * d).sum();
        let mut ou = 0.0;
        for (i, &(si, ti, di)) in waits.iter().enumerate() {
            ou += cfg.ou.integral_variance(di);
            for &(sj, tj, dj) in &waits[i + 1..] {
                let gap = (tj - (ti + di)).max(0.0);
                ou += 2.0 * si * sj * cfg.ou.integral_covariance(di, gap, dj);
            }
        }
        phase_variance = sigma * sigma * static_lever * static_lever + ou;
    }
    Ok(Plan { steps, phase_variance })
}

/// Drive rotation; `extra_rate` is added to the nutation rate.
fn drive(s: BlochState, omega: f64, phase: f64, duration: f64, extra_rate: f64) -> BlochState {
    let axis = Vector3::new(phase.cos(), phase.sin(), 0.0);
    rotate_unit(s, &axis, (omega + extra_rate) * duration)
}

/// Averages a Gaussian spread of the nutation angle with standard deviation
/// `sd`: components orthogonal to the drive axis shrink by `exp(−sd²/2)`.
fn shrink_across(s: BlochState, phase: f64, sd: f64) -> BlochState {
    let axis = Vector3::new(phase.cos(), phase.sin(), 0.0);
    let v = s.vector();
    let along = axis * axis.dot(&v);
    BlochState::from_vector(along + (v - along) * (-0.5 * sd * sd).exp())
}

fn scale_transverse(s: BlochState, factor: f64) -> BlochState {
    BlochState { sx: s.sx * factor, sy: s.sy * factor, sz: s.sz }
}

fn run_analytic(plan: &Plan, sigma: f64) -> f64 {
    let mut s = BlochState::ground();
    for step in &plan.steps {
        s = match *step {
            Step::Init => BlochState::ground(),
            Step::Pulse { omega, phase, duration, spread } => {
                let s = drive(s, omega, phase, duration, 0.0);
                if spread {
                    shrink_across(s, phase, sigma * duration)
                } else {
                    s
                }
            }
            Step::Free { psd_phase, .. } => rotate_z(s, psd_phase),
            Step::Decohere { factor } => {
                scale_transverse(s, factor * (-0.5 * plan.phase_variance).exp())
            }
        };
    }
    s.excited_population()
}

fn run_shot(plan: &Plan, cfg: &SimConfig, rng: &mut SimRng) -> f64 {
    let delta = sample_inhomogeneous_detuning(cfg.bath.t2_star, rng);
    let mut ou = OuProcess::stationary(&cfg.ou, rng);
    let mut s = BlochState::ground();
    for step in &plan.steps {
        s = match *step {
            Step::Init => BlochState::ground(),
            Step::Pulse { omega, phase, duration, spread } => {
                drive(s, omega, phase, duration, if spread { delta } else { 0.0 })
            }
            Step::Free { duration, psd_phase, gap } => {
                if gap > 0.0 {
                    ou.advance(gap, rng);
                }
                let noise = ou.advance_integrated(duration, rng);
                rotate_z(s, psd_phase + delta * duration + noise)
            }
            Step::Decohere { factor } => scale_transverse(s, factor),
        };
    }
    s.excited_population()
}

/// Readout expectation of `seq` under `cfg`.
pub fn simulate(seq: &Sequence, cfg: &SimConfig) -> Result<ReadoutExpectation, EngineError> {
    validate(seq).map_err(EngineError::InvalidSequence)?;
    cfg.validate()?;
    let bath = cfg.bath.realize(&cfg.constants);
    let plan = lower(seq, cfg, &bath)?;

    let (p1, std_error, shots) = match cfg.mode {
        EngineMode::Analytic => (run_analytic(&plan, cfg.bath.detuning_sigma()), 0.0, cfg.shots),
        EngineMode::MonteCarlo => {
            let root = SeedTree::new(cfg.seed);
            let samples: Vec<f64> = (0..cfg.shots)
                .into_par_iter()
                .map(|i| run_shot(&plan, cfg, &mut root.child(i).rng()))
                .collect();
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let se = if samples.len() > 1 {
                let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            (mean, se, cfg.shots)
        }
    };
    let target_met = cfg.target_std_error.is_none_or(|t| std_error <= t);
    Ok(ReadoutExpectation { p1, std_error, shots, target_met })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::echo_bath_modulation;
    use crate::optics::BeamSpec;
    use crate::pulseseq::sequence::{build_beff, build_double_psd, build_hahn, build_rabi, Half};

    const OMEGA: f64 = 2.0 * PI * 5e6;

    fn quiet() -> SimConfig {
        SimConfig::default()
    }

    fn beam(qwp: f64) -> BeamSpec {
        BeamSpec::new(20e-3, qwp, 785e-9, 1e-6).unwrap()
    }

    #[test]
    fn rabi_trivial_points() {
        let cfg = SimConfig { bath: BathConfig { t2_star: 1e3, t2: 2e3, ..Default::default() }, ..quiet() };
        let p0 = simulate(&build_rabi(0.0, OMEGA).unwrap(), &cfg).unwrap().p1;
        assert_eq!(p0, 0.0);
        let pi = simulate(&build_rabi(PI / OMEGA, OMEGA).unwrap(), &cfg).unwrap().p1;
        assert!((pi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rabi_envelope_is_gaussian_in_t2_star() {
        let cfg = quiet();
        let t = 10.0 * PI / OMEGA; // five full periods, sz should be +e^{−(t/T2*)²}
        let p = simulate(&build_rabi(t, OMEGA).unwrap(), &cfg).unwrap().p1;
        let expect = 0.5 * (1.0 - (-(t / cfg.bath.t2_star).powi(2)).exp());
        assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
    }

    #[test]
    fn hahn_at_revival_equals_envelope() {
        let cfg = SimConfig { ou: OuConfig { sigma: 0.0, ..Default::default() }, ..quiet() };
        let tau = cfg.bath.revival_period(&cfg.constants);
        let p = simulate(&build_hahn(tau, OMEGA).unwrap(), &cfg).unwrap().p1;
        let bath = echo_bath_modulation(tau, &cfg.bath, &cfg.constants);
        // bath is unity to rounding at an exact revival
        assert!((bath - 1.0).abs() < 1e-12);
        let v = echo_envelope(tau, cfg.bath.t2, cfg.bath.stretch);
        assert!((p - 0.5 * (1.0 + v)).abs() < 1e-12);
    }

    #[test]
    fn hahn_between_revivals_is_suppressed() {
        let cfg = quiet();
        let period = cfg.bath.revival_period(&cfg.constants);
        let at = simulate(&build_hahn(1.5 * period, OMEGA).unwrap(), &cfg).unwrap().p1;
        let v = echo_envelope(1.5 * period, cfg.bath.t2, cfg.bath.stretch);
        assert!(at - 0.5 < 0.5 * v * 0.9);
    }

    #[test]
    fn halves_rotate_oppositely() {
        let cfg = quiet();
        let tau = 21e-6;
        let s1 = simulate(&build_beff(tau, 19e-6, beam(45.0), Half::First, OMEGA).unwrap(), &cfg).unwrap().p1;
        let s2 = simulate(&build_beff(tau, 19e-6, beam(45.0), Half::Second, OMEGA).unwrap(), &cfg).unwrap().p1;
        assert!((s1 - 0.5 + (s2 - 0.5)).abs() < 1e-14);
        assert!(s2 > s1);
        let z1 = simulate(&build_beff(tau, 19e-6, beam(0.0), Half::First, OMEGA).unwrap(), &cfg).unwrap().p1;
        assert!((z1 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn double_psd_cancels_phase() {
        let cfg = quiet();
        let plus = simulate(&build_double_psd(21e-6, 15e-6, beam(45.0), OMEGA).unwrap(), &cfg).unwrap().p1;
        let minus = simulate(&build_double_psd(21e-6, 15e-6, beam(-45.0), OMEGA).unwrap(), &cfg).unwrap().p1;
        assert!((plus - minus).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_is_reproducible_and_close() {
        let cfg = SimConfig { mode: EngineMode::MonteCarlo, shots: 4000, seed: 9, ..quiet() };
        let seq = build_beff(21e-6, 19e-6, beam(45.0), Half::Second, OMEGA).unwrap();
        let a = simulate(&seq, &cfg).unwrap();
        let b = simulate(&seq, &cfg).unwrap();
        assert_eq!(a, b);
        let exact = simulate(&seq, &cfg.with_mode(EngineMode::Analytic)).unwrap();
        assert!((a.p1 - exact.p1).abs() < 4.0 * a.std_error + 1e-12);
    }

    #[test]
    fn single_shot_has_zero_error() {
        let cfg = SimConfig { mode: EngineMode::MonteCarlo, shots: 1, target_std_error: Some(1e-3), ..quiet() };
        let r = simulate(&build_hahn(21e-6, OMEGA).unwrap(), &cfg).unwrap();
        assert_eq!(r.std_error, 0.0);
        let cfg = SimConfig { shots: 10, ..cfg };
        let r = simulate(&build_rabi(1e-6, OMEGA).unwrap(), &cfg).unwrap();
        assert!(!r.target_met);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = SimConfig { shots: 0, ..quiet() };
        assert_eq!(simulate(&build_hahn(21e-6, OMEGA).unwrap(), &cfg), Err(EngineError::NoShots));
        let bad = Sequence::from_elements(SequenceKind::Custom, vec![]);
        assert!(matches!(simulate(&bad, &quiet()), Err(EngineError::InvalidSequence(_))));
    }
}
