//! Simulation, fitting and sensitivity toolkit for pulsed (XY8-N) and
//! concatenated continuous (CCDD) dynamical decoupling of a two-level spin.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod evolution;
pub mod noise;
pub mod sequences;
pub mod preset;
pub mod sensing;
pub mod spin;
pub mod study;
pub mod units;
pub mod waveform;

pub use error::{Error, Result};
