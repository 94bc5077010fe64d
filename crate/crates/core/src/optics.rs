//! Polarization optics and the optically induced effective field.
//!
//! A linearly polarized beam passes a quarter-wave plate whose fast axis sits
//! at angle `θ`; the resulting degree of circular polarization `S₃ = sin 2θ`
//! sets the photonic spin density. The effective axial field seen by the NV
//! ensemble scales with intensity, with `S₃`, and inversely with the product
//! of wavelength and optical detuning from the zero-phonon line.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::Vector3;
use num_complex::Complex64;
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// NV zero-phonon line (m).
pub const NV_ZPL_WAVELENGTH: f64 = 637e-9;

/// Shortest wavelength for which the far-detuned model is applied.
pub const MODEL_MIN_WAVELENGTH: f64 = 600e-9;
/// Longest wavelength for which the far-detuned model is applied.
pub const MODEL_MAX_WAVELENGTH: f64 = 1000e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpticsError {
    #[error("polarization vector has zero norm")]
    ZeroNorm,
    #[error("beam waist must be positive, got {0} m")]
    NonPositiveWaist(f64),
    #[error("optical power must be non-negative, got {0} W")]
    NegativePower(f64),
    #[error("wavelength {0} m outside model range [600 nm, 1000 nm]")]
    WavelengthOutOfRange(f64),
    #[error("wavelength {wavelength} m is not red-detuned from the ZPL at {zpl} m")]
    NotRedDetuned { wavelength: f64, zpl: f64 },
    #[error("invalid field-model parameter: {0}")]
    InvalidModel(String),
    #[error("calibration anchor is degenerate: {0}")]
    DegenerateAnchor(String),
}

/// Transverse polarization state `(ex, ey)`.
///
/// Observables are invariant under a global phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector {
    pub ex: Complex64,
    pub ey: Complex64,
}

impl JonesVector {
    pub fn new(ex: Complex64, ey: Complex64) -> Self {
        Self { ex, ey }
    }

    /// Horizontal (x) linear polarization.
    pub fn horizontal() -> Self {
        Self::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    }

    /// `(1, i)/√2`, the `S₃ = +1` state.
    pub fn circular_plus() -> Self {
        Self::new(
            Complex64::new(FRAC_1_SQRT_2, 0.0),
            Complex64::new(0.0, FRAC_1_SQRT_2),
        )
    }

    pub fn norm_sqr(&self) -> f64 {
        self.ex.norm_sqr() + self.ey.norm_sqr()
    }

    pub fn normalized(&self) -> Result<Self, OpticsError> {
        let n = self.norm_sqr().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(OpticsError::ZeroNorm);
        }
        Ok(Self::new(self.ex / n, self.ey / n))
    }

    pub fn conj(&self) -> Self {
        Self::new(self.ex.conj(), self.ey.conj())
    }
}

/// Applies a quarter-wave plate with fast axis at `theta_deg` from x.
///
/// The retardance sign is chosen so that x-polarized light at `θ` leaves with
/// `S₃ = sin 2θ`.
pub fn jones_after_qwp(e_in: JonesVector, theta_deg: f64) -> JonesVector {
    let theta = theta_deg.rem_euclid(360.0).to_radians();
    let (s, c) = theta.sin_cos();
    let i = Complex64::new(0.0, 1.0);
    // R(θ) · diag(1, −i) · R(−θ)
    let m00 = Complex64::new(c * c, 0.0) - i * (s * s);
    let m11 = Complex64::new(s * s, 0.0) - i * (c * c);
    let m01 = (1.0 + i) * (s * c);
    JonesVector::new(
        m00 * e_in.ex + m01 * e_in.ey,
        m01 * e_in.ex + m11 * e_in.ey,
    )
}

/// Normalized degree of circular polarization, `2·Im(ex*·ey)/(|ex|²+|ey|²)`.
pub fn stokes_s3(e: JonesVector) -> Result<f64, OpticsError> {
    let n = e.norm_sqr();
    if !(n.is_finite() && n > 0.0) {
        return Err(OpticsError::ZeroNorm);
    }
    Ok(2.0 * (e.ex.conj() * e.ey).im / n)
}

/// A monochromatic field sample in a medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldVector {
    /// Complex amplitude (V/m).
    pub e: [Complex64; 3],
    /// Permittivity (F/m).
    pub permittivity: f64,
    /// Optical angular frequency (rad/s).
    pub omega: f64,
}

impl FieldVector {
    pub fn new(e: [Complex64; 3], permittivity: f64, omega: f64) -> Result<Self, OpticsError> {
        if !(permittivity > 0.0 && permittivity.is_finite()) {
            return Err(OpticsError::InvalidModel(format!(
                "permittivity must be positive, got {permittivity}"
            )));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(OpticsError::InvalidModel(format!(
                "optical frequency must be positive, got {omega}"
            )));
        }
        Ok(Self { e, permittivity, omega })
    }

    pub fn conj(&self) -> Self {
        Self {
            e: self.e.map(|c| c.conj()),
            ..*self
        }
    }
}

/// Electric photonic spin density `(ε/4ω₀)·Im(E* × E)` in J·s/m³.
pub fn photonic_spin_density(f: &FieldVector) -> Vector3<f64> {
    let [ex, ey, ez] = f.e;
    let cross = [
        ex.conj() * ey - ey.conj() * ex,
        ey.conj() * ez - ez.conj() * ey,
        ez.conj() * ex - ex.conj() * ez,
    ];
    // reorder to (x, y, z) components of E* × E
    let im = Vector3::new(cross[1].im, cross[2].im, cross[0].im);
    im * (f.permittivity / (4.0 * f.omega))
}

/// Peak intensity of a Gaussian beam, `2P/(π·w₀²)`.
pub fn peak_intensity(power: f64, waist: f64) -> Result<f64, OpticsError> {
    if !(waist > 0.0) {
        return Err(OpticsError::NonPositiveWaist(waist));
    }
    if power < 0.0 {
        return Err(OpticsError::NegativePower(power));
    }
    Ok(2.0 * power / (PI * waist * waist))
}

/// Mean intensity over the `1/e²` spot area, `P/(π·w₀²)`.
pub fn mean_intensity(power: f64, waist: f64) -> Result<f64, OpticsError> {
    Ok(0.5 * peak_intensity(power, waist)?)
}

/// Optical detuning `Δ = 2πc(1/λ_ZPL − 1/λ)` in rad/s. Only the red-detuned
/// side is modeled.
pub fn detuning(wavelength: f64, zpl: f64) -> Result<f64, OpticsError> {
    if !(wavelength > zpl) {
        return Err(OpticsError::NotRedDetuned { wavelength, zpl });
    }
    Ok(2.0 * PI * SPEED_OF_LIGHT * (1.0 / zpl - 1.0 / wavelength))
}

/// Illumination parameters of the spin-density beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSpec {
    /// Optical power (W).
    pub power: f64,
    /// Quarter-wave-plate fast-axis angle (degrees).
    pub qwp_deg: f64,
    /// Vacuum wavelength (m).
    pub wavelength: f64,
    /// Gaussian waist (m).
    pub waist: f64,
}

impl BeamSpec {
    pub const DEFAULT_WAIST: f64 = 1e-6;

    pub fn new(power: f64, qwp_deg: f64, wavelength: f64, waist: f64) -> Result<Self, OpticsError> {
        let beam = Self { power, qwp_deg, wavelength, waist };
        beam.validate()?;
        Ok(beam)
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.power >= 0.0 && self.power.is_finite()) {
            return Err(OpticsError::NegativePower(self.power));
        }
        if !(self.waist > 0.0 && self.waist.is_finite()) {
            return Err(OpticsError::NonPositiveWaist(self.waist));
        }
        if !(MODEL_MIN_WAVELENGTH..=MODEL_MAX_WAVELENGTH).contains(&self.wavelength) {
            return Err(OpticsError::WavelengthOutOfRange(self.wavelength));
        }
        if !self.qwp_deg.is_finite() {
            return Err(OpticsError::InvalidModel("QWP angle is not finite".into()));
        }
        Ok(())
    }

    pub fn peak_intensity(&self) -> f64 {
        2.0 * self.power / (PI * self.waist * self.waist)
    }

    /// Polarization after the plate for x-polarized input.
    pub fn polarization(&self) -> JonesVector {
        jones_after_qwp(JonesVector::horizontal(), self.qwp_deg)
    }

    pub fn s3(&self) -> f64 {
        // horizontal input is unit norm and the plate is unitary
        stokes_s3(self.polarization()).unwrap_or(0.0)
    }

    pub fn with_power(self, power: f64) -> Self {
        Self { power, ..self }
    }

    pub fn with_qwp(self, qwp_deg: f64) -> Self {
        Self { qwp_deg, ..self }
    }

    pub fn with_wavelength(self, wavelength: f64) -> Self {
        Self { wavelength, ..self }
    }
}

/// Piecewise-linear temperature factor on the absorption rate.
///
/// Linear extrapolation outside the table, floored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureFactor {
    points: Vec<(f64, f64)>,
}

impl TemperatureFactor {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self, OpticsError> {
        if points.is_empty() {
            return Err(OpticsError::InvalidModel("empty temperature table".into()));
        }
        if points.iter().any(|(t, g)| !t.is_finite() || !g.is_finite() || *g < 0.0) {
            return Err(OpticsError::InvalidModel(
                "temperature table entries must be finite with g >= 0".into(),
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in points.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(OpticsError::InvalidModel(format!(
                    "duplicate temperature {} K in table",
                    w[0].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(OpticsError::InvalidModel(
                    "temperature factor must not decrease with temperature".into(),
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, temperature: f64) -> f64 {
        let p = &self.points;
        if p.len() == 1 {
            return p[0].1;
        }
        let seg = match p.iter().position(|(t, _)| *t >= temperature) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => p.len() - 2,
        };
        let (t0, g0) = p[seg];
        let (t1, g1) = p[seg + 1];
        (g0 + (g1 - g0) * (temperature - t0) / (t1 - t0)).max(0.0)
    }
}

impl Default for TemperatureFactor {
    fn default() -> Self {
        Self { points: vec![(265.0, 0.5), (295.0, 1.0)] }
    }
}

/// Calibration mapping beam settings to the effective axial field and to the
/// off-resonant absorption rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveFieldModel {
    /// Field per (intensity / (wavelength · detuning)); T·m·rad/(s·W/m²).
    pub c_cal: f64,
    pub lambda_zpl: f64,
    /// Absorption constant; rate = κ·I₀/Δ²·g(T).
    pub kappa: f64,
    pub temperature_factor: TemperatureFactor,
}

/// Operating point used to anchor the default field calibration.
pub const DEFAULT_ANCHOR: CalibrationAnchor = CalibrationAnchor {
    power: 20e-3,
    qwp_deg: 45.0,
    wavelength: 785e-9,
    field: 60e-9,
};

/// Reference absorption rate at 818 nm, 20 mW, 295 K, 1 µm waist (1/s).
pub const DEFAULT_ABSORPTION_REFERENCE_RATE: f64 = 100.0;

/// One `(P, θ, λ) → B` calibration point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationAnchor {
    pub power: f64,
    pub qwp_deg: f64,
    pub wavelength: f64,
    pub field: f64,
}

impl EffectiveFieldModel {
    pub fn new(
        c_cal: f64,
        lambda_zpl: f64,
        kappa: f64,
        temperature_factor: TemperatureFactor,
    ) -> Result<Self, OpticsError> {
        let m = Self { c_cal, lambda_zpl, kappa, temperature_factor };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.c_cal > 0.0 && self.c_cal.is_finite()) {
            return Err(OpticsError::InvalidModel(format!("C_cal must be positive, got {}", self.c_cal)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(OpticsError::InvalidModel(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.lambda_zpl > 0.0 && self.lambda_zpl.is_finite()) {
            return Err(OpticsError::InvalidModel("ZPL wavelength must be positive".into()));
        }
        Ok(())
    }

    /// Solves `C_cal` so the anchor beam (with `waist`) produces the anchor field.
    pub fn solve_c_cal(
        anchor: &CalibrationAnchor,
        waist: f64,
        lambda_zpl: f64,
    ) -> Result<f64, OpticsError> {
        let beam = BeamSpec::new(anchor.power, anchor.qwp_deg, anchor.wavelength, waist)?;
        if !(anchor.field.is_finite() && anchor.field != 0.0) {
            return Err(OpticsError::DegenerateAnchor("target field must be non-zero".into()));
        }
        let drive = beam.peak_intensity() * beam.s3();
        if drive.abs() < 1e-12 * beam.peak_intensity().max(f64::MIN_POSITIVE) || drive == 0.0 {
            return Err(OpticsError::DegenerateAnchor(
                "anchor beam has zero power or linear polarization".into(),
            ));
        }
        let c = anchor.field * beam.wavelength * detuning(beam.wavelength, lambda_zpl)? / drive;
        if !(c > 0.0) {
            return Err(OpticsError::DegenerateAnchor(
                "anchor field sign disagrees with the beam handedness".into(),
            ));
        }
        Ok(c)
    }

    /// Solves `κ` so the reference beam absorbs at `rate` with `g = g(temperature)`.
    pub fn solve_kappa(
        beam: &BeamSpec,
        rate: f64,
        lambda_zpl: f64,
        g: f64,
    ) -> Result<f64, OpticsError> {
        let d = detuning(beam.wavelength, lambda_zpl)?;
        let i0 = beam.peak_intensity();
        if !(i0 > 0.0 && g > 0.0) {
            return Err(OpticsError::DegenerateAnchor("reference absorption beam is dark".into()));
        }
        Ok(rate * d * d / (i0 * g))
    }

    pub fn with_c_cal(&self, c_cal: f64) -> Self {
        Self { c_cal, ..self.clone() }
    }
}

impl Default for EffectiveFieldModel {
    fn default() -> Self {
        let c_cal = Self::solve_c_cal(&DEFAULT_ANCHOR, BeamSpec::DEFAULT_WAIST, NV_ZPL_WAVELENGTH)
            .expect("default anchor is valid");
        let reference = BeamSpec {
            power: 20e-3,
            qwp_deg: 45.0,
            wavelength: 818e-9,
            waist: BeamSpec::DEFAULT_WAIST,
        };
        let g = TemperatureFactor::default();
        let kappa = Self::solve_kappa(
            &reference,
            DEFAULT_ABSORPTION_REFERENCE_RATE,
            NV_ZPL_WAVELENGTH,
            g.eval(295.0),
        )
        .expect("reference beam is valid");
        Self {
            c_cal,
            lambda_zpl: NV_ZPL_WAVELENGTH,
            kappa,
            temperature_factor: g,
        }
    }
}

/// Signed effective field (T) along the NV axis.
pub fn effective_field(beam: &BeamSpec, model: &EffectiveFieldModel) -> Result<f64, OpticsError> {
    let d = detuning(beam.wavelength, model.lambda_zpl)?;
    Ok(model.c_cal * beam.peak_intensity() * beam.s3() / (beam.wavelength * d))
}

/// Off-resonant absorption rate (1/s) at temperature `temperature` (K).
pub fn absorption_rate(
    beam: &BeamSpec,
    model: &EffectiveFieldModel,
    temperature: f64,
) -> Result<f64, OpticsError> {
    let d = detuning(beam.wavelength, model.lambda_zpl)?;
    Ok(model.kappa * beam.peak_intensity() / (d * d) * model.temperature_factor.eval(temperature))
}

/// The four NV orientations of a (100)-grown crystal, each oriented toward
/// the +z surface normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NvAxis {
    A111,
    A1b1b1,
    A1b11,
    Ab111,
}

impl NvAxis {
    pub const ALL: [NvAxis; 4] = [NvAxis::A111, NvAxis::A1b1b1, NvAxis::A1b11, NvAxis::Ab111];

    pub fn direction(self) -> Vector3<f64> {
        let v = match self {
            NvAxis::A111 => Vector3::new(1.0, 1.0, 1.0),
            NvAxis::A1b1b1 => Vector3::new(-1.0, -1.0, 1.0),
            NvAxis::A1b11 => Vector3::new(1.0, -1.0, 1.0),
            NvAxis::Ab111 => Vector3::new(-1.0, 1.0, 1.0),
        };
        v / 3f64.sqrt()
    }
}

/// Projection of a lab-frame unit vector onto an NV axis.
pub fn nv_axis_projection(axis: NvAxis, v: &Vector3<f64>) -> f64 {
    axis.direction().dot(v)
}
