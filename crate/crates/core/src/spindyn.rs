//! Two-level spin dynamics on the Bloch sphere.
//!
//! The NV ground-state triplet is reduced to the `m_s = 0 ↔ −1` transition.
//! `sz = +1` is `|0⟩` (the optically pumped state) and the population of the
//! other level is `p₁ = (1 − sz)/2`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpinError {
    #[error("rotation axis must be a unit vector (norm {0})")]
    NonUnitAxis(f64),
    #[error("visibility factor {0} outside [0, 1]")]
    VisibilityOutOfRange(f64),
    #[error("duration must be non-negative, got {0} s")]
    NegativeDuration(f64),
    #[error("Bloch vector norm {0} exceeds 1")]
    NotPhysical(f64),
}

/// Gyromagnetic ratios used throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// NV electron spin (Hz/T).
    pub gamma_nv: f64,
    /// Carbon-13 nucleus (Hz/T).
    pub gamma_c13: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            gamma_nv: 28.024e9,
            gamma_c13: 10.705e6,
        }
    }
}

impl Constants {
    /// Phase (rad) accumulated by the NV spin in `field` (T) over `duration` (s).
    pub fn nv_phase(&self, field: f64, duration: f64) -> f64 {
        2.0 * PI * self.gamma_nv * field * duration
    }
}

const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochState {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl BlochState {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self, SpinError> {
        let s = Self { sx, sy, sz };
        let n = s.norm();
        if !(n <= 1.0 + NORM_SLACK) {
            return Err(SpinError::NotPhysical(n));
        }
        Ok(s)
    }

    /// `|0⟩`.
    pub fn ground() -> Self {
        Self { sx: 0.0, sy: 0.0, sz: 1.0 }
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self { sx: v.x, sy: v.y, sz: v.z }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.sx, self.sy, self.sz)
    }

    pub fn norm(&self) -> f64 {
        self.vector().norm()
    }

    pub fn transverse_norm(&self) -> f64 {
        self.sx.hypot(self.sy)
    }

    /// Population of the `m_s = −1` level.
    pub fn excited_population(&self) -> f64 {
        (0.5 * (1.0 - self.sz)).clamp(0.0, 1.0)
    }
}

/// Rodrigues rotation without axis validation.
pub(crate) fn rotate_unit(s: BlochState, axis: &Vector3<f64>, angle: f64) -> BlochState {
    let v = s.vector();
    let (sin, cos) = angle.sin_cos();
    let rotated = v * cos + axis.cross(&v) * sin + axis * (axis.dot(&v) * (1.0 - cos));
    BlochState::from_vector(rotated)
}

/// Right-handed rotation of `s` about the unit vector `axis` by `angle`.
pub fn rotate(s: BlochState, axis: &Vector3<f64>, angle: f64) -> Result<BlochState, SpinError> {
    let n = axis.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(SpinError::NonUnitAxis(n));
    }
    Ok(rotate_unit(s, axis, angle))
}

/// Rectangular microwave pulse with Rabi frequency `omega`, detuning
/// `detuning` (both rad/s) and drive phase `phase`.
pub fn mw_pulse(
    s: BlochState,
    omega: f64,
    detuning: f64,
    phase: f64,
    duration: f64,
) -> Result<BlochState, SpinError> {
    if !(duration >= 0.0) {
        return Err(SpinError::NegativeDuration(duration));
    }
    let field = Vector3::new(omega * phase.cos(), omega * phase.sin(), detuning);
    let rate = field.norm();
    if rate == 0.0 || duration == 0.0 {
        return Ok(s);
    }
    Ok(rotate_unit(s, &(field / rate), rate * duration))
}

/// Free precession in an axial field `field` (T) for `duration` (s).
pub fn accumulate_phase(
    s: BlochState,
    field: f64,
    duration: f64,
    constants: &Constants,
) -> Result<BlochState, SpinError> {
    if !(duration >= 0.0) {
        return Err(SpinError::NegativeDuration(duration));
    }
    Ok(rotate_z(s, constants.nv_phase(field, duration)))
}

pub(crate) fn rotate_z(s: BlochState, angle: f64) -> BlochState {
    let (sin, cos) = angle.sin_cos();
    BlochState {
        sx: s.sx * cos - s.sy * sin,
        sy: s.sx * sin + s.sy * cos,
        sz: s.sz,
    }
}

/// Scales the transverse components by the visibility factor `v`.
pub fn apply_dephasing(s: BlochState, v: f64) -> Result<BlochState, SpinError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(SpinError::VisibilityOutOfRange(v));
    }
    Ok(BlochState { sx: s.sx * v, sy: s.sy * v, sz: s.sz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn close(a: BlochState, b: BlochState, tol: f64) -> bool {
        (a.vector() - b.vector()).norm() < tol
    }

    #[test]
    fn pi_about_x_inverts() {
        let s = rotate(BlochState::ground(), &Vector3::x(), PI).unwrap();
        assert!(close(s, BlochState { sx: 0.0, sy: 0.0, sz: -1.0 }, 1e-15));
    }

    #[test]
    fn half_pi_about_y() {
        let s = rotate(BlochState::ground(), &Vector3::y(), PI / 2.0).unwrap();
        assert!(close(s, BlochState { sx: 1.0, sy: 0.0, sz: 0.0 }, 1e-15));
    }

    #[test]
    fn rotation_composition() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let s = BlochState::new(0.3, -0.4, 0.5).unwrap();
        let twice = rotate(rotate(s, &axis, PI / 2.0).unwrap(), &axis, PI / 2.0).unwrap();
        assert!(close(twice, rotate(s, &axis, PI).unwrap(), 1e-14));
    }

    #[test]
    fn non_unit_axis_rejected() {
        assert!(matches!(
            rotate(BlochState::ground(), &Vector3::new(1.0, 1.0, 0.0), 1.0),
            Err(SpinError::NonUnitAxis(_))
        ));
    }

    #[test]
    fn resonant_pi_pulse() {
        let omega = 2.0 * PI * 5e6;
        let s = mw_pulse(BlochState::ground(), omega, 0.0, 0.0, PI / omega).unwrap();
        assert_relative_eq!(s.sz, -1.0, epsilon = 1e-14);
        assert_relative_eq!(s.excited_population(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rabi_formula() {
        let omega = 2.0 * PI * 5e6;
        for k in 0..50 {
            let t = k as f64 * 7e-9;
            let s = mw_pulse(BlochState::ground(), omega, 0.0, 0.3, t).unwrap();
            let expected = (omega * t / 2.0).sin().powi(2);
            assert_relative_eq!(s.excited_population(), expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn far_detuned_pulse_barely_flips() {
        let omega = 1e6;
        let s = mw_pulse(BlochState::ground(), omega, 10.0 * omega, 0.0, PI / omega).unwrap();
        assert!(s.excited_population() <= 1.0 / 101.0 + 1e-12);
    }

    #[test]
    fn idle_drive_is_identity() {
        let s = BlochState::new(0.1, 0.2, 0.3).unwrap();
        assert_eq!(mw_pulse(s, 0.0, 0.0, 0.0, 1e-6).unwrap(), s);
        assert!(mw_pulse(s, 1.0, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn phase_example_60nt() {
        let c = Constants::default();
        let start = BlochState { sx: 1.0, sy: 0.0, sz: 0.0 };
        let s = accumulate_phase(start, 60e-9, 21e-6, &c).unwrap();
        let phi = s.sy.atan2(s.sx);
        assert_relative_eq!(phi, 2.0 * PI * 28.024e9 * 60e-9 * 21e-6, epsilon = 1e-14);
        assert_relative_eq!(phi, 0.2218, epsilon = 1e-4);
        assert_eq!(accumulate_phase(start, 0.0, 21e-6, &c).unwrap(), start);
        let back = accumulate_phase(s, -60e-9, 21e-6, &c).unwrap();
        assert!(close(back, start, 1e-15));
    }

    #[test]
    fn dephasing_examples() {
        let s = BlochState { sx: 1.0, sy: 0.0, sz: 0.0 };
        assert_eq!(apply_dephasing(s, 1.0).unwrap(), s);
        assert_eq!(apply_dephasing(s, 0.5).unwrap(), BlochState { sx: 0.5, sy: 0.0, sz: 0.0 });
        let z = apply_dephasing(BlochState { sx: 0.6, sy: 0.0, sz: 0.8 }, 0.0).unwrap();
        assert_eq!((z.sx, z.sy, z.sz), (0.0, 0.0, 0.8));
        assert!(apply_dephasing(s, 1.5).is_err());
        assert!(apply_dephasing(s, -0.1).is_err());
    }

    fn unit_vector() -> impl Strategy<Value = Vector3<f64>> {
        (0.0..PI, 0.0..2.0 * PI).prop_map(|(t, p)| {
            Vector3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos())
        })
    }

    fn state() -> impl Strategy<Value = BlochState> {
        (unit_vector(), 0.0..=1.0f64).prop_map(|(v, r)| BlochState::from_vector(v * r))
    }

    proptest! {
        #[test]
        fn rotations_preserve_norm(s in state(), axis in unit_vector(), angle in -20.0..20.0f64) {
            let r = rotate(s, &axis, angle).unwrap();
            prop_assert!((r.norm() - s.norm()).abs() < 1e-12);
        }

        #[test]
        fn pulses_preserve_norm(
            s in state(),
            omega in 0.0..1e8f64,
            delta in -1e8..1e8f64,
            phase in -7.0..7.0f64,
            t in 0.0..2e-6f64,
        ) {
            let r = mw_pulse(s, omega, delta, phase, t).unwrap();
            prop_assert!((r.norm() - s.norm()).abs() < 1e-12);
        }

        #[test]
        fn full_rabi_cycle_is_identity(s in state(), omega in 1e5..1e8f64, phase in -3.0..3.0f64) {
            let r = mw_pulse(s, omega, 0.0, phase, 2.0 * PI / omega).unwrap();
            prop_assert!(close(r, s, 1e-9));
        }

        #[test]
        fn phase_is_additive(s in state(), b in -1e-6..1e-6f64, t1 in 0.0..1e-4f64, t2 in 0.0..1e-4f64) {
            let c = Constants::default();
            let two = accumulate_phase(accumulate_phase(s, b, t1, &c).unwrap(), b, t2, &c).unwrap();
            let one = accumulate_phase(s, b, t1 + t2, &c).unwrap();
            prop_assert!(close(two, one, 1e-12));
        }

        #[test]
        fn dephasing_is_monotone(s in state(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r_lo = apply_dephasing(s, lo).unwrap();
            let r_hi = apply_dephasing(s, hi).unwrap();
            prop_assert!(r_lo.transverse_norm() <= r_hi.transverse_norm() + 1e-15);
            prop_assert!(r_hi.norm() <= s.norm() + 1e-15);
        }

        #[test]
        fn echo_refocuses_static_phase(phi in -10.0..10.0f64) {
            let x = Vector3::x();
            let s = rotate(BlochState::ground(), &x, PI / 2.0).unwrap();
            let s = rotate_z(s, phi);
            let s = rotate(s, &x, PI).unwrap();
            let s = rotate_z(s, phi);
            let s = rotate(s, &x, PI / 2.0).unwrap();
            prop_assert!((s.sz - 1.0).abs() < 1e-12);
        }
    }
}
