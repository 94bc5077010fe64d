use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::optics::BeamSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("echo half-time {tau} s too short for pulses needing {needed} s")]
    TauTooShort { tau: f64, needed: f64 },
    #[error("PSD pulse of {t0} s does not fit a {tau} s half with {guard} s guard")]
    PsdTooLong { t0: f64, tau: f64, guard: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sequence failed validation: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Which echo half carries the spin-density pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Half {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementKind {
    LaserInit,
    /// Rectangular drive with Rabi frequency `omega` (rad/s) and phase (rad).
    Mw { omega: f64, phase: f64 },
    Wait,
    Psd { beam: BeamSpec },
    Readout,
}

impl ElementKind {
    fn tag(&self) -> &'static str {
        match self {
            ElementKind::LaserInit => "laser_init",
            ElementKind::Mw { .. } => "mw",
            ElementKind::Wait => "wait",
            ElementKind::Psd { .. } => "psd",
            ElementKind::Readout => "readout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseElement {
    pub kind: ElementKind,
    /// Start time (s).
    pub start: f64,
    /// Duration (s).
    pub duration: f64,
}

impl PulseElement {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn center(&self) -> f64 {
        self.start + 0.5 * self.duration
    }

    /// Nutation angle of a microwave element.
    pub fn rotation_angle(&self) -> Option<f64> {
        match self.kind {
            ElementKind::Mw { omega, .. } => Some(omega * self.duration),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SequenceKind {
    Rabi,
    Hahn,
    DoublePsd,
    Beff(Half),
    Custom,
}

impl SequenceKind {
    fn tag(&self) -> &'static str {
        match self {
            SequenceKind::Rabi => "rabi",
            SequenceKind::Hahn => "hahn",
            SequenceKind::DoublePsd => "double-psd",
            SequenceKind::Beff(Half::First) => "beff-first",
            SequenceKind::Beff(Half::Second) => "beff-second",
            SequenceKind::Custom => "custom",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        Some(match s {
            "rabi" => SequenceKind::Rabi,
            "hahn" => SequenceKind::Hahn,
            "double-psd" => SequenceKind::DoublePsd,
            "beff-first" => SequenceKind::Beff(Half::First),
            "beff-second" => SequenceKind::Beff(Half::Second),
            "custom" => SequenceKind::Custom,
            _ => return None,
        })
    }
}

/// Immutable, time-ordered list of elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    kind: SequenceKind,
    elements: Vec<PulseElement>,
}

impl Sequence {
    /// Wraps hand-built elements; call [`validate`] before simulating.
    pub fn from_elements(kind: SequenceKind, elements: Vec<PulseElement>) -> Self {
        Self { kind, elements }
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn elements(&self) -> &[PulseElement] {
        &self.elements
    }

    pub fn total_duration(&self) -> f64 {
        self.elements.iter().map(PulseElement::end).fold(0.0, f64::max)
    }

    pub fn mw_pulses(&self) -> impl Iterator<Item = &PulseElement> {
        self.elements.iter().filter(|e| matches!(e.kind, ElementKind::Mw { .. }))
    }

    /// Center-to-center spacings `(τ₁, τ₂)` if this is a π/2–π–π/2 echo.
    pub fn echo_halves(&self) -> Option<(f64, f64)> {
        let mw: Vec<&PulseElement> = self.mw_pulses().collect();
        if mw.len() != 3 {
            return None;
        }
        let angles: Vec<f64> = mw.iter().filter_map(|e| e.rotation_angle()).collect();
        let is = |a: f64, target: f64| (a - target).abs() <= 1e-9 * target;
        if !(is(angles[0], PI / 2.0) && is(angles[1], PI) && is(angles[2], PI / 2.0)) {
            return None;
        }
        Some((mw[1].center() - mw[0].center(), mw[2].center() - mw[1].center()))
    }

    /// Line-oriented text form; see [`Sequence::from_str`] for the grammar.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

/// One line per element:
///
/// ```text
/// sequence <kind>
/// laser_init <start_s> <duration_s>
/// mw         <start_s> <duration_s> <omega_rad_per_s> <phase_rad>
/// wait       <start_s> <duration_s>
/// psd        <start_s> <duration_s> <power_w> <qwp_deg> <wavelength_m> <waist_m>
/// readout    <start_s> <duration_s>
/// ```
impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sequence {}", self.kind.tag())?;
        for e in &self.elements {
            write!(f, "{} {:e} {:e}", e.kind.tag(), e.start, e.duration)?;
            match e.kind {
                ElementKind::Mw { omega, phase } => write!(f, " {omega:e} {phase:e}")?,
                ElementKind::Psd { beam } => write!(
                    f,
                    " {:e} {:e} {:e} {:e}",
                    beam.power, beam.qwp_deg, beam.wavelength, beam.waist
                )?,
                _ => {}
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl FromStr for Sequence {
    type Err = SequenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut kind = None;
        let mut elements = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| SequenceError::Parse { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "sequence" {
                if kind.is_some() || fields.len() != 2 {
                    return Err(err("expected a single `sequence <kind>` header".into()));
                }
                kind = Some(
                    SequenceKind::from_tag(fields[1])
                        .ok_or_else(|| err(format!("unknown sequence kind `{}`", fields[1])))?,
                );
                continue;
            }
            if kind.is_none() {
                return Err(err("missing `sequence <kind>` header".into()));
            }
            let nums = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad number `{f}`"))))
                .collect::<Result<Vec<f64>, _>>()?;
            let want = |n: usize| {
                if nums.len() == n {
                    Ok(())
                } else {
                    Err(err(format!("`{}` takes {} numbers, got {}", fields[0], n, nums.len())))
                }
            };
            let kind_e = match fields[0] {
                "laser_init" => {
                    want(2)?;
                    ElementKind::LaserInit
                }
                "wait" => {
                    want(2)?;
                    ElementKind::Wait
                }
                "readout" => {
                    want(2)?;
                    ElementKind::Readout
                }
                "mw" => {
                    want(4)?;
                    ElementKind::Mw { omega: nums[2], phase: nums[3] }
                }
                "psd" => {
                    want(6)?;
                    ElementKind::Psd {
                        beam: BeamSpec {
                            power: nums[2],
                            qwp_deg: nums[3],
                            wavelength: nums[4],
                            waist: nums[5],
                        },
                    }
                }
                other => return Err(err(format!("unknown element `{other}`"))),
            };
            elements.push(PulseElement { kind: kind_e, start: nums[0], duration: nums[1] });
        }
        let kind = kind.ok_or(SequenceError::Parse { line: 0, message: "empty sequence text".into() })?;
        Ok(Sequence { kind, elements })
    }
}

/// Phase of the final π/2 pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutAxis {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
}

impl ReadoutAxis {
    pub fn phase(self) -> f64 {
        match self {
            ReadoutAxis::PlusX => 0.0,
            ReadoutAxis::MinusX => PI,
            ReadoutAxis::PlusY => PI / 2.0,
            ReadoutAxis::MinusY => -PI / 2.0,
        }
    }
}

/// One spin-density pulse centered in an echo half.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdPlacement {
    pub half: Half,
    pub beam: BeamSpec,
    pub duration: f64,
}

/// Fixed timing around the spin manipulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceBuilder {
    pub laser_init: f64,
    pub readout: f64,
    /// Minimum clearance between a PSD pulse and the surrounding π pulses.
    pub guard: f64,
}

impl Default for SequenceBuilder {
    fn default() -> Self {
        Self { laser_init: 3e-6, readout: 1e-6, guard: 1e-6 }
    }
}

fn check_omega(omega: f64) -> Result<(), SequenceError> {
    if omega > 0.0 && omega.is_finite() {
        Ok(())
    } else {
        Err(SequenceError::InvalidParameter(format!("Rabi frequency must be positive, got {omega}")))
    }
}

impl SequenceBuilder {
    fn laser(&self) -> PulseElement {
        PulseElement { kind: ElementKind::LaserInit, start: 0.0, duration: self.laser_init }
    }

    /// Laser init, one drive pulse of length `t_mw`, readout.
    pub fn rabi(&self, t_mw: f64, omega: f64) -> Result<Sequence, SequenceError> {
        check_omega(omega)?;
        if !(t_mw >= 0.0 && t_mw.is_finite()) {
            return Err(SequenceError::InvalidParameter(format!("pulse length must be >= 0, got {t_mw}")));
        }
        let mut elements = vec![self.laser()];
        let mut t = self.laser_init;
        if t_mw > 0.0 {
            elements.push(PulseElement { kind: ElementKind::Mw { omega, phase: 0.0 }, start: t, duration: t_mw });
            t += t_mw;
        }
        elements.push(PulseElement { kind: ElementKind::Readout, start: t, duration: self.readout });
        Ok(Sequence { kind: SequenceKind::Rabi, elements })
    }

    /// General Hahn echo with center-to-center half time `tau`.
    pub fn echo(
        &self,
        kind: SequenceKind,
        tau: f64,
        omega: f64,
        readout: ReadoutAxis,
        psd: &[PsdPlacement],
    ) -> Result<Sequence, SequenceError> {
        check_omega(omega)?;
        let t_half = PI / (2.0 * omega);
        let t_pi = PI / omega;
        let needed = 0.5 * t_half + 0.5 * t_pi;
        if !(tau > needed) || !tau.is_finite() {
            return Err(SequenceError::TauTooShort { tau, needed });
        }
        let wait = tau - needed;
        let mw = |phase: f64| ElementKind::Mw { omega, phase };

        let mut elements = vec![self.laser()];
        let mut t = self.laser_init;
        let p1 = PulseElement { kind: mw(0.0), start: t, duration: t_half };
        t = p1.end();
        let w1 = PulseElement { kind: ElementKind::Wait, start: t, duration: wait };
        t = w1.end();
        let p2 = PulseElement { kind: mw(0.0), start: t, duration: t_pi };
        t = p2.end();
        let w2 = PulseElement { kind: ElementKind::Wait, start: t, duration: wait };
        t = w2.end();
        let p3 = PulseElement { kind: mw(readout.phase()), start: t, duration: t_half };
        t = p3.end();
        let ro = PulseElement { kind: ElementKind::Readout, start: t, duration: self.readout };

        let mut psd_elements = Vec::new();
        for placement in psd {
            placement
                .beam
                .validate()
                .map_err(|e| SequenceError::InvalidParameter(e.to_string()))?;
            let t0 = placement.duration;
            if !(t0 > 0.0) {
                return Err(SequenceError::InvalidParameter(format!("PSD duration must be positive, got {t0}")));
            }
            if t0 > (tau - self.guard) * (1.0 + 1e-12) {
                return Err(SequenceError::PsdTooLong { t0, tau, guard: self.guard });
            }
            let mid = match placement.half {
                Half::First => 0.5 * (p1.center() + p2.center()),
                Half::Second => 0.5 * (p2.center() + p3.center()),
            };
            psd_elements.push(PulseElement {
                kind: ElementKind::Psd { beam: placement.beam },
                start: mid - 0.5 * t0,
                duration: t0,
            });
        }

        elements.extend([p1, w1]);
        elements.extend(psd_elements.iter().filter(|e| e.start < p2.start));
        elements.extend([p2, w2]);
        elements.extend(psd_elements.iter().filter(|e| e.start >= p2.start));
        elements.extend([p3, ro]);
        let seq = Sequence { kind, elements };
        validate(&seq).map_err(SequenceError::Invalid)?;
        Ok(seq)
    }

    /// Plain Hahn echo, read out about −x so full coherence maps to `p₁ = 1`.
    pub fn hahn(&self, tau: f64, omega: f64) -> Result<Sequence, SequenceError> {
        self.echo(SequenceKind::Hahn, tau, omega, ReadoutAxis::MinusX, &[])
    }

    /// Identical PSD pulses in both halves; their phases cancel.
    pub fn double_psd(&self, tau: f64, t0: f64, beam: BeamSpec, omega: f64) -> Result<Sequence, SequenceError> {
        let p = |half| PsdPlacement { half, beam, duration: t0 };
        self.echo(SequenceKind::DoublePsd, tau, omega, ReadoutAxis::MinusX, &[p(Half::First), p(Half::Second)])
    }

    /// One PSD pulse in the chosen half, read out about −y so the signal is
    /// linear in the induced phase.
    pub fn beff(&self, tau: f64, t0: f64, beam: BeamSpec, half: Half, omega: f64) -> Result<Sequence, SequenceError> {
        self.echo(
            SequenceKind::Beff(half),
            tau,
            omega,
            ReadoutAxis::MinusY,
            &[PsdPlacement { half, beam, duration: t0 }],
        )
    }
}

pub fn build_rabi(t_mw: f64, omega: f64) -> Result<Sequence, SequenceError> {
    SequenceBuilder::default().rabi(t_mw, omega)
}

pub fn build_hahn(tau: f64, omega: f64) -> Result<Sequence, SequenceError> {
    SequenceBuilder::default().hahn(tau, omega)
}

pub fn build_double_psd(tau: f64, t0: f64, beam: BeamSpec, omega: f64) -> Result<Sequence, SequenceError> {
    SequenceBuilder::default().double_psd(tau, t0, beam, omega)
}

pub fn build_beff(tau: f64, t0: f64, beam: BeamSpec, half: Half, omega: f64) -> Result<Sequence, SequenceError> {
    SequenceBuilder::default().beff(tau, t0, beam, half, omega)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    MissingLaserInit,
    MissingReadout,
    NonPositiveDuration { index: usize },
    NonFiniteTiming { index: usize },
    NegativeStart { index: usize },
    OutOfOrder { index: usize },
    Overlap { first: usize, second: usize },
    InvalidPulse { index: usize, reason: String },
    PsdOutsideWait { index: usize },
    AsymmetricEcho { first: f64, second: f64 },
}

const OVERLAP_SLACK: f64 = 1e-15;

/// Length of the common part of two elements.
pub fn overlap(a: &PulseElement, b: &PulseElement) -> f64 {
    (a.end().min(b.end()) - a.start.max(b.start)).max(0.0)
}

/// Checks ordering, overlaps, echo symmetry and init/readout presence.
pub fn validate(seq: &Sequence) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let els = seq.elements();
    if els.is_empty() {
        return Err(vec![Violation::Empty]);
    }
    if !matches!(els[0].kind, ElementKind::LaserInit) {
        v.push(Violation::MissingLaserInit);
    }
    if !matches!(els[els.len() - 1].kind, ElementKind::Readout) {
        v.push(Violation::MissingReadout);
    }
    for (i, e) in els.iter().enumerate() {
        if !(e.start.is_finite() && e.duration.is_finite()) {
            v.push(Violation::NonFiniteTiming { index: i });
            continue;
        }
        if !(e.duration > 0.0) {
            v.push(Violation::NonPositiveDuration { index: i });
        }
        if e.start < 0.0 {
            v.push(Violation::NegativeStart { index: i });
        }
        match e.kind {
            ElementKind::Mw { omega, phase } if !(omega >= 0.0 && omega.is_finite() && phase.is_finite()) => {
                v.push(Violation::InvalidPulse { index: i, reason: "bad drive parameters".into() });
            }
            ElementKind::Psd { beam } => {
                if let Err(err) = beam.validate() {
                    v.push(Violation::InvalidPulse { index: i, reason: err.to_string() });
                }
            }
            _ => {}
        }
    }
    if !v.is_empty() && v.iter().any(|x| matches!(x, Violation::NonFiniteTiming { .. })) {
        return Err(v);
    }

    // Non-PSD elements form a strictly ordered, non-overlapping timeline.
    let timeline: Vec<(usize, &PulseElement)> = els
        .iter()
        .enumerate()
        .filter(|(_, e)| !matches!(e.kind, ElementKind::Psd { .. }))
        .collect();
    for w in timeline.windows(2) {
        let (i, a) = w[0];
        let (j, b) = w[1];
        if b.start < a.start {
            v.push(Violation::OutOfOrder { index: j });
        } else if b.start < a.end() - OVERLAP_SLACK * a.end().abs().max(1.0) {
            v.push(Violation::Overlap { first: i, second: j });
        }
    }
    // PSD light may only coexist with free evolution.
    for (i, p) in els.iter().enumerate().filter(|(_, e)| matches!(e.kind, ElementKind::Psd { .. })) {
        let mut covered = 0.0;
        for (j, e) in &timeline {
            if matches!(e.kind, ElementKind::Wait) {
                covered += overlap(p, e);
                continue;
            }
            if p.start < e.end() && e.start < p.end() {
                let (first, second) = if i < *j { (i, *j) } else { (*j, i) };
                v.push(Violation::Overlap { first, second });
            }
        }
        if covered < p.duration * (1.0 - 1e-9) {
            v.push(Violation::PsdOutsideWait { index: i });
        }
    }
    if let Some((t1, t2)) = seq.echo_halves() {
        if (t1 - t2).abs() > 1e-12 * t1.abs().max(t2.abs()) {
            v.push(Violation::AsymmetricEcho { first: t1, second: t2 });
        }
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OMEGA: f64 = 2.0 * PI * 5e6;

    fn beam() -> BeamSpec {
        BeamSpec::new(20e-3, 45.0, 785e-9, 1e-6).unwrap()
    }

    #[test]
    fn rabi_layout() {
        let s = build_rabi(100e-9, OMEGA).unwrap();
        let kinds: Vec<&str> = s.elements().iter().map(|e| e.kind.tag()).collect();
        assert_eq!(kinds, ["laser_init", "mw", "readout"]);
        assert_eq!(build_rabi(0.0, OMEGA).unwrap().elements().len(), 2);
        assert!(validate(&s).is_ok());
    }

    #[test]
    fn hahn_layout_and_symmetry() {
        let s = build_hahn(21e-6, OMEGA).unwrap();
        assert!(validate(&s).is_ok());
        let (t1, t2) = s.echo_halves().unwrap();
        assert!((t1 - 21e-6).abs() < 1e-18);
        assert!((t1 - t2).abs() <= 1e-12 * t1);
        assert!(matches!(build_hahn(50e-9, OMEGA), Err(SequenceError::TauTooShort { .. })));
    }

    #[test]
    fn psd_placement() {
        let s = build_beff(21e-6, 20e-6, beam(), Half::Second, OMEGA).unwrap();
        let psd: Vec<_> = s.elements().iter().filter(|e| matches!(e.kind, ElementKind::Psd { .. })).collect();
        assert_eq!(psd.len(), 1);
        let mw: Vec<_> = s.mw_pulses().collect();
        assert!(psd[0].start > mw[1].end() && psd[0].end() < mw[2].start);
        assert!(matches!(
            build_beff(21e-6, 20.5e-6, beam(), Half::First, OMEGA),
            Err(SequenceError::PsdTooLong { .. })
        ));
        let d = build_double_psd(21e-6, 10e-6, beam(), OMEGA).unwrap();
        assert_eq!(d.elements().iter().filter(|e| matches!(e.kind, ElementKind::Psd { .. })).count(), 2);
    }

    #[test]
    fn overlapping_pulses_flagged() {
        let mw = |start| PulseElement { kind: ElementKind::Mw { omega: OMEGA, phase: 0.0 }, start, duration: 1e-7 };
        let seq = Sequence::from_elements(
            SequenceKind::Custom,
            vec![
                PulseElement { kind: ElementKind::LaserInit, start: 0.0, duration: 1e-6 },
                mw(1e-6),
                mw(1.05e-6),
                PulseElement { kind: ElementKind::Readout, start: 2e-6, duration: 1e-6 },
            ],
        );
        let v = validate(&seq).unwrap_err();
        assert!(v.contains(&Violation::Overlap { first: 1, second: 2 }), "{v:?}");
    }

    #[test]
    fn asymmetric_echo_flagged() {
        let s = build_hahn(21e-6, OMEGA).unwrap();
        let mut els = s.elements().to_vec();
        // stretch the second half by 1 %
        let shift = 0.01 * 21e-6;
        els[4].duration += shift;
        for e in &mut els[5..] {
            e.start += shift;
        }
        let v = validate(&Sequence::from_elements(SequenceKind::Hahn, els)).unwrap_err();
        assert!(matches!(v[..], [Violation::AsymmetricEcho { .. }]), "{v:?}");
    }

    #[test]
    fn missing_init_and_readout() {
        let seq = Sequence::from_elements(
            SequenceKind::Custom,
            vec![PulseElement { kind: ElementKind::Wait, start: 0.0, duration: 1e-6 }],
        );
        let v = validate(&seq).unwrap_err();
        assert!(v.contains(&Violation::MissingLaserInit));
        assert!(v.contains(&Violation::MissingReadout));
        assert_eq!(validate(&Sequence::from_elements(SequenceKind::Custom, vec![])), Err(vec![Violation::Empty]));
    }

    #[test]
    fn psd_over_microwave_flagged() {
        let s = build_beff(21e-6, 10e-6, beam(), Half::First, OMEGA).unwrap();
        let mut els = s.elements().to_vec();
        let pi_start = els[3].start;
        els[2].start = pi_start - 1e-6;
        let v = validate(&Sequence::from_elements(s.kind(), els)).unwrap_err();
        assert!(v.iter().any(|x| matches!(x, Violation::Overlap { .. })));
    }

    #[test]
    fn text_round_trip() {
        let s = build_double_psd(21e-6, 12e-6, beam(), OMEGA).unwrap();
        let parsed: Sequence = s.to_text().parse().unwrap();
        assert_eq!(parsed, s);
    }

    #[test]
    fn text_parse_errors() {
        assert!(matches!("mw 0 1".parse::<Sequence>(), Err(SequenceError::Parse { line: 1, .. })));
        assert!(matches!(
            "sequence hahn\nlaser_init 0 1e-6\nwait 1e-6".parse::<Sequence>(),
            Err(SequenceError::Parse { line: 3, .. })
        ));
        assert!("sequence nope".parse::<Sequence>().is_err());
    }
}
