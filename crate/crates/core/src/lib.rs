//! Simulation of optically induced effective magnetic fields sensed by an
//! NV-center spin ensemble: beam optics, spin dynamics under pulse
//! sequences, decoherence, shot-noise readout and least-squares fitting.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod fitkit;
pub mod optics;
pub mod pulseseq;
pub mod readout;
pub mod rng;
pub mod spindyn;

pub use bath::{BathConfig, OuConfig};
pub use fitkit::{fit_lm, FitModel, FitResult, FitStatus};
pub use optics::{BeamSpec, EffectiveFieldModel, JonesVector};
pub use pulseseq::{simulate, EngineMode, Half, ReadoutExpectation, Sequence, SimConfig};
pub use readout::ReadoutConfig;
pub use rng::SeedTree;
pub use spindyn::{BlochState, Constants};
