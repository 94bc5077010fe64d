//! Pulse-sequence representation and the simulation engine.

mod engine;
mod sequence;

pub use engine::{simulate, EngineError, EngineMode, ReadoutExpectation, SimConfig};
pub use sequence::{
    build_beff, build_double_psd, build_hahn, build_rabi, overlap, validate, ElementKind, Half,
    PsdPlacement, PulseElement, ReadoutAxis, Sequence, SequenceBuilder, SequenceError,
    SequenceKind, Violation,
};

/// Default Rabi frequency (rad/s).
pub const DEFAULT_RABI_FREQUENCY: f64 = 2.0 * std::f64::consts::PI * 5e6;
