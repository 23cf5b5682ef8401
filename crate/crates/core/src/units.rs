//! Physical constants and unit conversions.
//!
//! Everything inside the crate is stored in SI seconds and angular
//! frequencies (rad/s). Human-facing values (MHz, µs, Gauss) are converted
//! at the edges with the helpers below.

use std::f64::consts::PI;

/// Electron gyromagnetic ratio, rad s⁻¹ T⁻¹ (2π · 28.03 GHz/T).
pub const GAMMA_E: f64 = 2.0 * PI * 28.03e9;

/// NV ground-state zero-field splitting, rad/s (2π · 2.87 GHz).
pub const NV_ZERO_FIELD_SPLITTING: f64 = 2.0 * PI * 2.87e9;

/// Angular frequency from a cyclic frequency in MHz.
pub fn mhz(f: f64) -> f64 {
    2.0 * PI * f * 1e6
}

/// Cyclic frequency in MHz from an angular frequency.
pub fn to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

pub fn us(t: f64) -> f64 {
    t * 1e-6
}

pub fn to_us(t: f64) -> f64 {
    t * 1e6
}

/// Transition frequency of the m_s = 0 ↔ m_s = −1 line for an axial field.
///
/// Returns `None` when the field pushes the −1 level through the zero-field
/// crossing (the transition frequency would not be positive).
pub fn omega0_from_gauss(field_gauss: f64) -> Option<f64> {
    let zeeman = GAMMA_E * field_gauss * 1e-4;
    let w = NV_ZERO_FIELD_SPLITTING - zeeman;
    (w > 0.0).then_some(w)
}

/// Magnetic field (Tesla) from γb expressed in rad/s.
pub fn tesla_from_gamma_b(gamma_b: f64) -> f64 {
    gamma_b / GAMMA_E
}
