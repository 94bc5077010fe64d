//! Sequence simulation plus photon-counting readout for one sweep point.

use std::f64::consts::PI;

use nvsim_core::optics::BeamSpec;
use nvsim_core::pulseseq::{
    simulate, EngineMode, Half, PsdPlacement, ReadoutAxis, Sequence, SequenceKind, SimConfig,
};
use nvsim_core::readout::{
    differential_ratio, estimate_beff, normalize_signal, normalized_std_error, total_counts,
};
use nvsim_core::rng::SeedTree;

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Population {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    /// Estimated field (T).
    pub field: f64,
    pub std_error: f64,
    pub saturated: bool,
    pub amplitude: f64,
}

struct Raw {
    p1: f64,
    engine_se: f64,
    counts: f64,
}

/// Run settings shared by every point of a sweep.
#[derive(Debug, Clone)]
pub struct Runner {
    pub cfg: ExperimentConfig,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Self { cfg }
    }

    pub fn mode(&self) -> EngineMode {
        self.cfg.engine.mode
    }

    pub fn root(&self) -> SeedTree {
        SeedTree::new(self.cfg.engine.seed)
    }

    pub fn sim_config(&self, temperature: f64, seed: u64) -> SimConfig {
        SimConfig {
            mode: self.cfg.engine.mode,
            shots: self.cfg.readout.shots,
            seed,
            bath: self.cfg.bath(),
            ou: self.cfg.sample.ou,
            field_model: self.cfg.calib.field_model.clone(),
            constants: self.cfg.constants,
            temperature,
            target_std_error: None,
        }
    }

    /// Expected (analytic) or Poisson-drawn (Monte Carlo) total counts.
    fn counts(&self, p1: f64, tree: SeedTree) -> Result<f64, CliError> {
        let r = &self.cfg.readout;
        Ok(match self.mode() {
            EngineMode::Analytic => r.mean_total_counts(p1),
            EngineMode::MonteCarlo => total_counts(p1.clamp(0.0, 1.0), r, &mut tree.rng())? as f64,
        })
    }

    fn run(&self, seq: &Sequence, temperature: f64, tree: SeedTree) -> Result<Raw, CliError> {
        let e = simulate(seq, &self.sim_config(temperature, tree.child(0).seed()))?;
        Ok(Raw { p1: e.p1, engine_se: e.std_error, counts: self.counts(e.p1, tree.child(1))? })
    }

    /// `(ref₀, ref₁)`: `|0⟩` and `|1⟩` reference counts.
    fn references(&self, tree: SeedTree) -> Result<(f64, f64), CliError> {
        Ok((self.counts(0.0, tree.child(0))?, self.counts(1.0, tree.child(1))?))
    }

    /// Normalized population of one sequence.
    pub fn population(&self, seq: &Sequence, temperature: f64, tree: SeedTree) -> Result<Population, CliError> {
        let raw = self.run(seq, temperature, tree.child(0))?;
        let (r0, r1) = self.references(tree.child(1))?;
        let p = normalize_signal(raw.counts, r0, r1)?;
        let se = normalized_std_error(raw.counts, r0, r1)?;
        Ok(Population { value: p.value, std_error: se.hypot(raw.engine_se) })
    }

    pub fn temperature(&self, wavelength: f64) -> f64 {
        self.cfg.calib.temperature_at(wavelength)
    }

    /// Differential field estimate for `beam`, with the response amplitude
    /// calibrated by a linearly polarized echo of equal intensity.
    pub fn field(&self, beam: BeamSpec, tree: SeedTree) -> Result<FieldPoint, CliError> {
        let q = &self.cfg.sequence;
        let temperature = self.temperature(beam.wavelength);
        let first = q.builder.beff(q.tau, q.t0, beam, Half::First, q.rabi_frequency)?;
        let second = q.builder.beff(q.tau, q.t0, beam, Half::Second, q.rabi_frequency)?;
        let dark = [PsdPlacement { half: Half::First, beam: beam.with_qwp(0.0), duration: q.t0 }];
        let cal = |axis| q.builder.echo(SequenceKind::Custom, q.tau, q.rabi_frequency, axis, &dark);
        let plus = cal(ReadoutAxis::PlusX)?;
        let minus = cal(ReadoutAxis::MinusX)?;

        let raws = [&first, &second, &plus, &minus]
            .iter()
            .enumerate()
            .map(|(i, s)| self.run(s, temperature, tree.child(i as u64)))
            .collect::<Result<Vec<Raw>, CliError>>()?;
        let (r0, r1) = self.references(tree.child(8))?;
        let p = |i: usize| normalize_signal(raws[i].counts, r0, r1).map(|n| n.value);
        let (s1, s2, spx, smx) = (p(0)?, p(1)?, p(2)?, p(3)?);
        let amplitude = 0.5 * (smx - spx);
        if !(amplitude > 0.0) {
            return Err(CliError::Validation(format!(
                "calibration echo shows no contrast at tau = {} s (amplitude {amplitude})",
                q.tau
            )));
        }
        let est = estimate_beff(s1, s2, q.t0, amplitude, &self.cfg.constants)?;

        let (r, se_counts) = differential_ratio(raws[0].counts, raws[1].counts, raws[2].counts, raws[3].counts)?;
        let den = raws[3].p1 - raws[2].p1;
        let eng = |i: usize| raws[i].engine_se.powi(2);
        let var_engine = if den != 0.0 { (eng(0) + eng(1) + r * r * (eng(2) + eng(3))) / (den * den) } else { 0.0 };
        let se_r = (se_counts * se_counts + var_engine).sqrt();
        let scale = 2.0 * PI * self.cfg.constants.gamma_nv * q.t0;
        let cos = est.phase.cos();
        let std_error = if est.saturated || cos <= 0.0 { f64::INFINITY } else { se_r / (cos * scale) };
        Ok(FieldPoint { field: est.field, std_error, saturated: est.saturated, amplitude })
    }
}
