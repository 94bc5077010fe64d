//! Sectioned `key = value` experiment configuration.
//!
//! Lists are comma separated; `start:step:stop` expands to an inclusive
//! range. Every key is optional and unknown keys are errors.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nvsim_core::bath::{BathConfig, OuConfig};
use nvsim_core::optics::{
    BeamSpec, CalibrationAnchor, EffectiveFieldModel, TemperatureFactor, DEFAULT_ABSORPTION_REFERENCE_RATE,
    DEFAULT_ANCHOR, NV_ZPL_WAVELENGTH,
};
use nvsim_core::pulseseq::{EngineMode, SequenceBuilder};
use nvsim_core::readout::ReadoutConfig;
use nvsim_core::spindyn::Constants;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: [{section}] {key}: {message}")]
    Value { line: usize, section: String, key: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw parsed file; values are consumed by the typed loader.
#[derive(Debug, Default)]
struct Ini {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

const SECTIONS: [&str; 6] = ["sample", "laser", "calib", "sequence", "readout", "engine"];

impl Ini {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut ini = Ini::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split(['#', ';']).next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, message: "unterminated section header".into() })?
                    .trim()
                    .to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(ConfigError::Syntax { line, message: format!("unknown section [{name}]") });
                }
                if ini.sections.contains_key(&name) {
                    return Err(ConfigError::Syntax { line, message: format!("section [{name}] repeated") });
                }
                ini.sections.insert(name.clone(), BTreeMap::new());
                current = Some(name);
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, message: "expected `key = value`".into() })?;
            let section = current
                .as_ref()
                .ok_or_else(|| ConfigError::Syntax { line, message: "key outside of a section".into() })?;
            let key = key.trim().to_string();
            let map = ini.sections.get_mut(section).expect("section inserted");
            if map.contains_key(&key) {
                return Err(ConfigError::Syntax { line, message: format!("key `{key}` repeated") });
            }
            map.insert(key, Entry { value: value.trim().to_string(), line });
        }
        Ok(ini)
    }
}

struct Section<'a> {
    name: &'a str,
    entries: BTreeMap<String, Entry>,
}

impl Section<'_> {
    fn err(&self, key: &str, line: usize, message: impl Into<String>) -> ConfigError {
        ConfigError::Value { line, section: self.name.into(), key: key.into(), message: message.into() }
    }

    fn take<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).map_err(|m| self.err(key, e.line, m)),
        }
    }

    fn f64(&mut self, key: &str, target: &mut f64) -> Result<(), ConfigError> {
        if let Some(v) = self.take(key, parse_f64)? {
            *target = v;
        }
        Ok(())
    }

    fn list(&mut self, key: &str, target: &mut Vec<f64>) -> Result<(), ConfigError> {
        if let Some(v) = self.take(key, parse_grid)? {
            *target = v;
        }
        Ok(())
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            Some((k, e)) => Err(self_err(self.name, &k, e.line, "unknown key")),
            None => Ok(()),
        }
    }
}

fn self_err(section: &str, key: &str, line: usize, message: &str) -> ConfigError {
    ConfigError::Value { line, section: section.into(), key: key.into(), message: message.into() }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let s = s.replace('_', "");
    match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    }
    .map_err(|_| format!("`{s}` is not a non-negative integer"))
}

/// Comma list or inclusive `start:step:stop` range. Empty means an empty grid.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("range `{s}` must be start:step:stop"));
        }
        let (a, step, b) = (parse_f64(parts[0])?, parse_f64(parts[1])?, parse_f64(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(format!("range `{s}` needs step > 0 and stop >= start"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize + 1;
        if n > 1_000_000 {
            return Err(format!("range `{s}` has too many points"));
        }
        return Ok((0..n).map(|i| a + step * i as f64).collect());
    }
    s.split(',').map(|p| parse_f64(p.trim())).collect()
}

fn parse_pairs(s: &str) -> Result<Vec<(f64, f64)>, String> {
    s.split(',')
        .map(|p| {
            let (a, b) = p.split_once(':').ok_or_else(|| format!("`{}` must be x:y", p.trim()))?;
            Ok((parse_f64(a.trim())?, parse_f64(b.trim())?))
        })
        .collect()
}

/// `P_mW, θ_deg, λ_nm, B_nT`.
pub fn parse_anchor(s: &str) -> Result<CalibrationAnchor, String> {
    let v: Vec<f64> = s.split(',').map(|p| parse_f64(p.trim())).collect::<Result<_, _>>()?;
    if v.len() != 4 {
        return Err(format!("anchor `{s}` must be P_mW,theta_deg,lambda_nm,B_nT"));
    }
    Ok(CalibrationAnchor { power: v[0] * 1e-3, qwp_deg: v[1], wavelength: v[2] * 1e-9, field: v[3] * 1e-9 })
}

fn format_anchor(a: &CalibrationAnchor) -> String {
    format!("{}, {}, {}, {}", a.power * 1e3, a.qwp_deg, a.wavelength * 1e9, a.field * 1e9)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BiasSpec {
    /// Bias field (T).
    Field(f64),
    /// Place revival `k` at `tau` (s).
    Revival { tau: f64, k: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSection {
    pub t2_star: f64,
    pub t2: f64,
    pub stretch: f64,
    pub bias: BiasSpec,
    pub bath_spins: usize,
    pub hyperfine_max: f64,
    pub bath_contrast_max: f64,
    pub bath_seed: u64,
    pub ou: OuConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaserSection {
    /// Wavelengths of the power sweep (m).
    pub wavelengths: Vec<f64>,
    /// Wavelengths of the spectrum sweep (m).
    pub spectrum: Vec<f64>,
    /// Power grid of the field sweeps (W).
    pub powers: Vec<f64>,
    pub decoherence_powers: Vec<f64>,
    pub decoherence_wavelengths: Vec<f64>,
    pub qwp_grid: Vec<f64>,
    /// Operating point for sweeps that hold these fixed.
    pub power: f64,
    pub qwp: f64,
    pub wavelength: f64,
    pub waist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibSection {
    pub field_model: EffectiveFieldModel,
    pub anchor: CalibrationAnchor,
    pub temperature: f64,
    /// Per-wavelength temperature overrides `(λ, T)`.
    pub temperature_overrides: Vec<(f64, f64)>,
}

impl CalibSection {
    pub fn temperature_at(&self, wavelength: f64) -> f64 {
        self.temperature_overrides
            .iter()
            .find(|(l, _)| (l - wavelength).abs() < 1e-12)
            .map_or(self.temperature, |(_, t)| *t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSection {
    pub rabi_frequency: f64,
    pub tau: f64,
    pub t0: f64,
    pub builder: SequenceBuilder,
    pub rabi_grid: Vec<f64>,
    pub echo_grid: Vec<f64>,
    pub t0_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSection {
    pub mode: EngineMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sample: SampleSection,
    pub laser: LaserSection,
    pub calib: CalibSection,
    pub sequence: SequenceSection,
    pub readout: ReadoutConfig,
    pub engine: EngineSection,
    pub constants: Constants,
}

fn nm(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x * 1e-9).collect()
}

fn scaled(v: &[f64], k: f64) -> Vec<f64> {
    v.iter().map(|x| x * k).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let bath = BathConfig::default();
        Self {
            sample: SampleSection {
                t2_star: bath.t2_star,
                t2: bath.t2,
                stretch: bath.stretch,
                bias: BiasSpec::Field(bath.bias_field),
                bath_spins: bath.spin_count,
                hyperfine_max: bath.hyperfine_max,
                bath_contrast_max: bath.contrast_max,
                bath_seed: bath.seed,
                ou: OuConfig::default(),
            },
            laser: LaserSection {
                wavelengths: nm(&[730.0, 785.0, 818.0]),
                spectrum: nm(&[705.0, 730.0, 785.0, 818.0]),
                powers: scaled(&[5.0, 8.0, 11.0, 14.0, 17.0, 20.0], 1e-3),
                decoherence_powers: scaled(&[5.0, 10.0, 15.0, 20.0], 1e-3),
                decoherence_wavelengths: nm(&[705.0, 818.0]),
                qwp_grid: (0..13).map(|i| -45.0 + 15.0 * i as f64).collect(),
                power: 20e-3,
                qwp: 45.0,
                wavelength: 785e-9,
                waist: BeamSpec::DEFAULT_WAIST,
            },
            calib: CalibSection {
                field_model: EffectiveFieldModel::default(),
                anchor: DEFAULT_ANCHOR,
                temperature: 295.0,
                temperature_overrides: vec![(705e-9, 265.0)],
            },
            sequence: SequenceSection {
                rabi_frequency: 2.0 * PI * 5e6,
                tau: 21e-6,
                t0: 20e-6,
                builder: SequenceBuilder::default(),
                rabi_grid: (0..301).map(|i| i as f64 * 0.02e-6).collect(),
                echo_grid: (0..637).map(|i| 1e-6 + i as f64 * 0.25e-6).collect(),
                t0_grid: (0..21).map(|i| i as f64 * 1e-6).collect(),
            },
            readout: ReadoutConfig::default(),
            engine: EngineSection { mode: EngineMode::MonteCarlo, seed: 0 },
            constants: Constants::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut ini = Ini::parse(text)?;
        let mut cfg = Self::default();
        let mut section = |name: &'static str| Section { name, entries: ini.sections.remove(name).unwrap_or_default() };

        let mut s = section("sample");
        let us = |s: &mut Section, key: &str, target: &mut f64| -> Result<(), ConfigError> {
            if let Some(v) = s.take(key, parse_f64)? {
                *target = v * 1e-6;
            }
            Ok(())
        };
        us(&mut s, "t2_star_us", &mut cfg.sample.t2_star)?;
        us(&mut s, "t2_us", &mut cfg.sample.t2)?;
        s.f64("stretch", &mut cfg.sample.stretch)?;
        let bias = s.take("bias_mt", parse_f64)?;
        let revival = s.take("revival_tau_us", parse_f64)?;
        let index = s.take("revival_index", parse_u64)?;
        match (bias, revival) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid("[sample] bias_mt and revival_tau_us are mutually exclusive".into()))
            }
            (Some(b), None) => cfg.sample.bias = BiasSpec::Field(b * 1e-3),
            (None, Some(t)) => {
                let k = index.unwrap_or(1);
                if k == 0 || k > u32::MAX as u64 {
                    return Err(ConfigError::Invalid("[sample] revival_index must be >= 1".into()));
                }
                cfg.sample.bias = BiasSpec::Revival { tau: t * 1e-6, k: k as u32 };
            }
            (None, None) => {}
        }
        if let Some(n) = s.take("bath_spins", parse_u64)? {
            cfg.sample.bath_spins = n as usize;
        }
        if let Some(v) = s.take("hyperfine_max_khz", parse_f64)? {
            cfg.sample.hyperfine_max = 2.0 * PI * v * 1e3;
        }
        s.f64("bath_contrast_max", &mut cfg.sample.bath_contrast_max)?;
        if let Some(v) = s.take("bath_seed", parse_u64)? {
            cfg.sample.bath_seed = v;
        }
        if let Some(v) = s.take("ou_sigma_hz", parse_f64)? {
            cfg.sample.ou.sigma = 2.0 * PI * v;
        }
        us(&mut s, "ou_tau_c_us", &mut cfg.sample.ou.tau_c)?;
        s.finish()?;

        let mut s = section("laser");
        let grid = |s: &mut Section, key: &str, k: f64, target: &mut Vec<f64>| -> Result<(), ConfigError> {
            if let Some(v) = s.take(key, parse_grid)? {
                *target = scaled(&v, k);
            }
            Ok(())
        };
        grid(&mut s, "wavelengths_nm", 1e-9, &mut cfg.laser.wavelengths)?;
        grid(&mut s, "spectrum_nm", 1e-9, &mut cfg.laser.spectrum)?;
        grid(&mut s, "powers_mw", 1e-3, &mut cfg.laser.powers)?;
        grid(&mut s, "decoherence_powers_mw", 1e-3, &mut cfg.laser.decoherence_powers)?;
        grid(&mut s, "decoherence_wavelengths_nm", 1e-9, &mut cfg.laser.decoherence_wavelengths)?;
        s.list("qwp_deg", &mut cfg.laser.qwp_grid)?;
        if let Some(v) = s.take("power_mw", parse_f64)? {
            cfg.laser.power = v * 1e-3;
        }
        s.f64("qwp_fixed_deg", &mut cfg.laser.qwp)?;
        if let Some(v) = s.take("wavelength_nm", parse_f64)? {
            cfg.laser.wavelength = v * 1e-9;
        }
        if let Some(v) = s.take("waist_um", parse_f64)? {
            cfg.laser.waist = v * 1e-6;
        }
        s.finish()?;

        let mut s = section("calib");
        let zpl = s.take("lambda_zpl_nm", parse_f64)?.map_or(NV_ZPL_WAVELENGTH, |v| v * 1e-9);
        let c_cal = s.take("c_cal", parse_f64)?;
        let anchor = s.take("anchor", parse_anchor)?;
        let kappa = s.take("kappa", parse_f64)?;
        let reference_rate = s.take("absorption_ref_rate", parse_f64)?;
        let table = s.take("g_table", parse_pairs)?;
        s.f64("temperature_k", &mut cfg.calib.temperature)?;
        if let Some(pairs) = s.take("temperature_override", parse_pairs)? {
            cfg.calib.temperature_overrides = pairs.into_iter().map(|(l, t)| (l * 1e-9, t)).collect();
        }
        s.finish()?;
        if c_cal.is_some() && anchor.is_some() {
            return Err(ConfigError::Invalid("[calib] c_cal and anchor are mutually exclusive".into()));
        }
        if kappa.is_some() && reference_rate.is_some() {
            return Err(ConfigError::Invalid("[calib] kappa and absorption_ref_rate are mutually exclusive".into()));
        }
        let g = match table {
            Some(t) => TemperatureFactor::new(t).map_err(|e| ConfigError::Invalid(format!("[calib] g_table: {e}")))?,
            None => TemperatureFactor::default(),
        };
        let invalid = |e: nvsim_core::optics::OpticsError| ConfigError::Invalid(format!("[calib] {e}"));
        if let Some(a) = anchor {
            cfg.calib.anchor = a;
        }
        let c_cal = match c_cal {
            Some(c) => c,
            None => EffectiveFieldModel::solve_c_cal(&cfg.calib.anchor, cfg.laser.waist, zpl).map_err(invalid)?,
        };
        let kappa = match kappa {
            Some(k) => k,
            None => {
                let reference = BeamSpec::new(20e-3, 45.0, 818e-9, cfg.laser.waist).map_err(invalid)?;
                let rate = reference_rate.unwrap_or(DEFAULT_ABSORPTION_REFERENCE_RATE);
                EffectiveFieldModel::solve_kappa(&reference, rate, zpl, g.eval(295.0)).map_err(invalid)?
            }
        };
        cfg.calib.field_model = EffectiveFieldModel::new(c_cal, zpl, kappa, g).map_err(invalid)?;

        let mut s = section("sequence");
        if let Some(v) = s.take("rabi_frequency_mhz", parse_f64)? {
            cfg.sequence.rabi_frequency = 2.0 * PI * v * 1e6;
        }
        us(&mut s, "tau_us", &mut cfg.sequence.tau)?;
        us(&mut s, "t0_us", &mut cfg.sequence.t0)?;
        us(&mut s, "guard_us", &mut cfg.sequence.builder.guard)?;
        us(&mut s, "laser_init_us", &mut cfg.sequence.builder.laser_init)?;
        us(&mut s, "readout_us", &mut cfg.sequence.builder.readout)?;
        grid(&mut s, "rabi_t_us", 1e-6, &mut cfg.sequence.rabi_grid)?;
        grid(&mut s, "echo_tau_us", 1e-6, &mut cfg.sequence.echo_grid)?;
        grid(&mut s, "t0_grid_us", 1e-6, &mut cfg.sequence.t0_grid)?;
        s.finish()?;

        let mut s = section("readout");
        s.f64("photons_per_shot", &mut cfg.readout.photons_per_shot)?;
        s.f64("contrast", &mut cfg.readout.contrast)?;
        if let Some(v) = s.take("shots", parse_u64)? {
            cfg.readout.shots = v;
        }
        s.finish()?;

        let mut s = section("engine");
        if let Some(m) = s.take("mode", parse_mode)? {
            cfg.engine.mode = m;
        }
        if let Some(v) = s.take("seed", parse_u64)? {
            cfg.engine.seed = v;
        }
        s.finish()?;

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn bath(&self) -> BathConfig {
        let s = &self.sample;
        let bias_field = match s.bias {
            BiasSpec::Field(b) => b,
            BiasSpec::Revival { tau, k } => BathConfig::bias_for_revival(tau, k, &self.constants),
        };
        BathConfig {
            t2_star: s.t2_star,
            t2: s.t2,
            stretch: s.stretch,
            bias_field,
            spin_count: s.bath_spins,
            hyperfine_max: s.hyperfine_max,
            contrast_max: s.bath_contrast_max,
            seed: s.bath_seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.bath().validate().map_err(|e| ConfigError::Invalid(format!("[sample] {e}")))?;
        self.sample.ou.validate().map_err(|e| ConfigError::Invalid(format!("[sample] {e}")))?;
        self.readout.validate().map_err(|e| ConfigError::Invalid(format!("[readout] {e}")))?;
        let l = &self.laser;
        for &w in l.wavelengths.iter().chain(&l.spectrum).chain(&l.decoherence_wavelengths).chain([&l.wavelength]) {
            BeamSpec::new(l.power, l.qwp, w, l.waist).map_err(|e| ConfigError::Invalid(format!("[laser] {e}")))?;
        }
        if l.powers.iter().chain(&l.decoherence_powers).chain([&l.power]).any(|p| !(*p >= 0.0)) {
            return bad("[laser] powers must be >= 0".into());
        }
        let q = &self.sequence;
        if !(q.rabi_frequency > 0.0) {
            return bad("[sequence] rabi_frequency_mhz must be positive".into());
        }
        for (name, v) in [("guard_us", q.builder.guard), ("laser_init_us", q.builder.laser_init), ("readout_us", q.builder.readout)] {
            if !(v > 0.0) {
                return bad(format!("[sequence] {name} must be positive"));
            }
        }
        if q.rabi_grid.iter().any(|t| *t < 0.0) || q.t0_grid.iter().any(|t| *t < 0.0) {
            return bad("[sequence] time grids must be >= 0".into());
        }
        if !(q.tau > 0.0 && q.t0 > 0.0) {
            return bad("[sequence] tau_us and t0_us must be positive".into());
        }
        Ok(())
    }

    /// Echoes the calibration section in config syntax.
    pub fn calib_section(&self) -> String {
        let c = &self.calib;
        let m = &c.field_model;
        let mut out = String::from("[calib]\n");
        let _ = writeln!(out, "lambda_zpl_nm = {}", m.lambda_zpl * 1e9);
        let _ = writeln!(out, "c_cal = {:e}", m.c_cal);
        let _ = writeln!(out, "kappa = {:e}", m.kappa);
        let table: Vec<String> = m.temperature_factor.points().iter().map(|(t, g)| format!("{t}:{g}")).collect();
        let _ = writeln!(out, "g_table = {}", table.join(", "));
        let _ = writeln!(out, "temperature_k = {}", c.temperature);
        let ov: Vec<String> = c.temperature_overrides.iter().map(|(l, t)| format!("{}:{t}", l * 1e9)).collect();
        if !ov.is_empty() {
            let _ = writeln!(out, "temperature_override = {}", ov.join(", "));
        }
        let _ = writeln!(out, "# anchor = {}", format_anchor(&c.anchor));
        out
    }
}

pub fn parse_mode(s: &str) -> Result<EngineMode, String> {
    match s {
        "analytic" => Ok(EngineMode::Analytic),
        "mc" | "montecarlo" => Ok(EngineMode::MonteCarlo),
        _ => Err(format!("mode `{s}` must be analytic or mc")),
    }
}

pub fn mode_name(m: EngineMode) -> &'static str {
    match m {
        EngineMode::Analytic => "analytic",
        EngineMode::MonteCarlo => "mc",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn values_are_scaled() {
        let cfg = ExperimentConfig::parse(
            "[sample]\nt2_us = 80\nbias_mt = 8.9\n[laser]\npowers_mw = 1, 2\nqwp_deg = 0:45:90\n[engine]\nmode = analytic\nseed = 0x10\n",
        )
        .unwrap();
        assert!((cfg.sample.t2 - 80e-6).abs() < 1e-18);
        assert_eq!(cfg.sample.bias, BiasSpec::Field(8.9e-3));
        assert_eq!(cfg.laser.powers, vec![1e-3, 2e-3]);
        assert_eq!(cfg.laser.qwp_grid, vec![0.0, 45.0, 90.0]);
        assert_eq!(cfg.engine.mode, EngineMode::Analytic);
        assert_eq!(cfg.engine.seed, 16);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = ExperimentConfig::parse("[readout]\n\nshots = 10\nphotons = 5\n").unwrap_err();
        assert!(matches!(e, ConfigError::Value { line: 4, .. }), "{e}");
        let e = ExperimentConfig::parse("[readout]\nshots = ten\n").unwrap_err();
        assert!(matches!(e, ConfigError::Value { line: 2, .. }), "{e}");
        let e = ExperimentConfig::parse("[nope]\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));
        let e = ExperimentConfig::parse("shots = 1\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));
    }

    #[test]
    fn invariants_checked_after_parse() {
        assert!(matches!(ExperimentConfig::parse("[readout]\ncontrast = 1.5\n"), Err(ConfigError::Invalid(_))));
        assert!(ExperimentConfig::parse("[sample]\nbias_mt = 1\nrevival_tau_us = 21\n").is_err());
    }

    #[test]
    fn revival_spec_sets_bias() {
        let cfg = ExperimentConfig::parse("[sample]\nrevival_tau_us = 21\n").unwrap();
        let tau = cfg.bath().revival_period(&cfg.constants);
        assert!((tau - 21e-6).abs() < 1e-15);
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1:0.5:2").unwrap(), vec![1.0, 1.5, 2.0]);
        assert_eq!(parse_grid("").unwrap(), Vec::<f64>::new());
        assert!(parse_grid("1:0:2").is_err());
        assert_eq!(parse_grid("0:0.02:6").unwrap().len(), 301);
    }

    #[test]
    fn calib_section_round_trips() {
        let cfg = ExperimentConfig::default();
        let again = ExperimentConfig::parse(&cfg.calib_section()).unwrap();
        let (a, b) = (&cfg.calib.field_model, &again.calib.field_model);
        assert!((a.c_cal / b.c_cal - 1.0).abs() < 1e-12);
        assert!((a.kappa / b.kappa - 1.0).abs() < 1e-12);
    }
}
