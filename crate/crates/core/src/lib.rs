//! Pulse-level compilation and verification of parallel cross-resonance gates.
//!
//! The crate is split by pipeline stage:
//!
//! - [`pulse_model`]: envelopes, channels, schedules and the area/angle calibration
//! - [`gate_compiler`]: the gate layer and its algebraic rewrites
//! - [`pulse_parallelizer`]: lowering to schedules and the pulse-merging pass
//! - [`simulator`]: dense unitary, Choi and PTM machinery
//! - [`noise_bench`]: decoherence model, SPAM normalization, cycle benchmarking
//! - [`layout_analyzer`]: parity trees on coupling graphs

pub mod error;
pub mod gate_compiler;
pub mod layout_analyzer;
pub mod noise_bench;
pub mod pulse_model;
pub mod pulse_parallelizer;
pub mod simulator;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
