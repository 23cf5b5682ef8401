//! Two-level spin states and exact piecewise-constant propagation.
//!
//! A segment Hamiltonian is `H = (c_x σ_x + c_y σ_y + c_z σ_z) / 2` with the
//! coefficients in rad/s, so `|c|` is the Bloch precession rate. The
//! propagator of a segment is the closed-form SU(2) element
//! `U = cos(θ/2) 𝟙 − i sin(θ/2) n·σ`, θ = |c|·duration.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Lab,
    Rotating,
}

/// Convention for longitudinal relaxation at infinite temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxationChannel {
    /// Equal up/down population rates toward the maximally mixed state:
    /// populations relax with `T₁`, coherences with `2T₁`.
    #[default]
    SymmetricMixing,
    /// Isotropic shrinking of the Bloch vector: every component relaxes
    /// with `T₁`.
    Depolarizing,
}

/// T₁ relaxation acting alongside coherent evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relaxation {
    pub t1: f64,
    pub channel: RelaxationChannel,
}

impl Relaxation {
    pub fn none() -> Self {
        Self {
            t1: f64::INFINITY,
            channel: RelaxationChannel::SymmetricMixing,
        }
    }

    pub fn t1(t1: f64) -> Self {
        Self {
            t1,
            channel: RelaxationChannel::SymmetricMixing,
        }
    }

    pub fn is_active(&self) -> bool {
        self.t1.is_finite()
    }

    /// Decay factors `(transverse, longitudinal)` of the Bloch vector over `t`.
    pub fn factors(&self, t: f64) -> (f64, f64) {
        if !self.is_active() {
            return (1.0, 1.0);
        }
        let long = (-t / self.t1).exp();
        let trans = match self.channel {
            RelaxationChannel::SymmetricMixing => (-t / (2.0 * self.t1)).exp(),
            RelaxationChannel::Depolarizing => long,
        };
        (trans, long)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    /// Transition angular frequency, rad/s.
    pub omega0: f64,
    /// Longitudinal relaxation time in seconds; `f64::INFINITY` disables it.
    pub t1: f64,
    pub frame: Frame,
    #[serde(default)]
    pub channel: RelaxationChannel,
}

impl SpinSystem {
    pub fn new(omega0: f64, t1: f64, frame: Frame) -> Result<Self> {
        let sys = Self {
            omega0,
            t1,
            frame,
            channel: RelaxationChannel::default(),
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn rotating(omega0: f64, t1: f64) -> Result<Self> {
        Self::new(omega0, t1, Frame::Rotating)
    }

    pub fn with_channel(mut self, channel: RelaxationChannel) -> Self {
        self.channel = channel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::param("omega0", "must be finite and > 0"));
        }
        if !(self.t1 > 0.0) || self.t1.is_nan() {
            return Err(Error::param("t1", "must be > 0 or infinite"));
        }
        Ok(())
    }

    pub fn relaxation(&self) -> Relaxation {
        Relaxation {
            t1: self.t1,
            channel: self.channel,
        }
    }
}

/// Piecewise-constant Hamiltonian segment `(c·σ)/2` held for `duration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub coeffs: [f64; 3],
}

impl Segment {
    pub fn new(duration: f64, coeffs: [f64; 3]) -> Result<Self> {
        let seg = Self { duration, coeffs };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidSegment(format!(
                "duration {} must be finite and > 0",
                self.duration
            )));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSegment(format!(
                "non-finite coefficient in {:?}",
                self.coeffs
            )));
        }
        Ok(())
    }

    /// Closed-form SU(2) propagator `exp(−i H duration)` as a 2×2 matrix.
    pub fn unitary(&self) -> [[Complex64; 2]; 2] {
        let [cx, cy, cz] = self.coeffs;
        let norm = (cx * cx + cy * cy + cz * cz).sqrt();
        let half = 0.5 * norm * self.duration;
        let (s, c) = half.sin_cos();
        if norm == 0.0 {
            let one = Complex64::new(1.0, 0.0);
            let zero = Complex64::new(0.0, 0.0);
            return [[one, zero], [zero, one]];
        }
        let (nx, ny, nz) = (cx / norm, cy / norm, cz / norm);
        [
            [Complex64::new(c, -nz * s), Complex64::new(-ny * s, -nx * s)],
            [Complex64::new(ny * s, -nx * s), Complex64::new(c, nz * s)],
        ]
    }
}

/// Density matrix of the driven two-level subspace. Index 0 is |0⟩ (m_s = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState {
    rho: [[Complex64; 2]; 2],
}

impl SpinState {
    pub fn from_matrix(rho: [[Complex64; 2]; 2]) -> Result<Self> {
        let s = Self { rho };
        s.validate()?;
        Ok(s)
    }

    pub fn ground() -> Self {
        Self::from_bloch_unchecked([0.0, 0.0, 1.0])
    }

    pub fn excited() -> Self {
        Self::from_bloch_unchecked([0.0, 0.0, -1.0])
    }

    pub fn maximally_mixed() -> Self {
        Self::from_bloch_unchecked([0.0, 0.0, 0.0])
    }

    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let s = Self::from_bloch_unchecked(r);
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn from_bloch_unchecked(r: [f64; 3]) -> Self {
        let [x, y, z] = r;
        Self {
            rho: [
                [
                    Complex64::new(0.5 * (1.0 + z), 0.0),
                    Complex64::new(0.5 * x, -0.5 * y),
                ],
                [
                    Complex64::new(0.5 * x, 0.5 * y),
                    Complex64::new(0.5 * (1.0 - z), 0.0),
                ],
            ],
        }
    }

    pub fn matrix(&self) -> &[[Complex64; 2]; 2] {
        &self.rho
    }

    /// Population of |0⟩.
    pub fn p0(&self) -> f64 {
        self.rho[0][0].re
    }

    pub fn bloch(&self) -> [f64; 3] {
        let c = self.rho[0][1];
        [2.0 * c.re, -2.0 * c.im, self.rho[0][0].re - self.rho[1][1].re]
    }

    pub fn purity(&self) -> f64 {
        let r = &self.rho;
        r[0][0].norm_sqr() + r[1][1].norm_sqr() + r[0][1].norm_sqr() + r[1][0].norm_sqr()
    }

    pub fn trace(&self) -> Complex64 {
        self.rho[0][0] + self.rho[1][1]
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let a = self.rho[0][0].re;
        let d = self.rho[1][1].re;
        let b = self.rho[0][1];
        let mean = 0.5 * (a + d);
        let disc = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        [mean - disc, mean + disc]
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rho;
        if r.iter().flatten().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let herm = (r[0][1] - r[1][0].conj()).norm()
            + r[0][0].im.abs()
            + r[1][1].im.abs();
        if herm >= STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = (self.trace() - Complex64::new(1.0, 0.0)).norm();
        if tr >= STATE_TOL {
            return Err(Error::InvalidState(format!("trace deviates by {tr:e}")));
        }
        let ev = self.eigenvalues();
        if ev[0] < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {:e}", ev[0])));
        }
        Ok(())
    }

    fn relax(&mut self, relax: Relaxation, t: f64) {
        if !relax.is_active() {
            return;
        }
        let (trans, long) = relax.factors(t);
        let z = self.rho[0][0].re - self.rho[1][1].re;
        let z = z * long;
        self.rho[0][0] = Complex64::new(0.5 * (1.0 + z), 0.0);
        self.rho[1][1] = Complex64::new(0.5 * (1.0 - z), 0.0);
        self.rho[0][1] *= trans;
        self.rho[1][0] = self.rho[0][1].conj();
    }

    fn apply_unitary(&mut self, u: &[[Complex64; 2]; 2]) {
        let r = &self.rho;
        // m = U ρ
        let m = [
            [
                u[0][0] * r[0][0] + u[0][1] * r[1][0],
                u[0][0] * r[0][1] + u[0][1] * r[1][1],
            ],
            [
                u[1][0] * r[0][0] + u[1][1] * r[1][0],
                u[1][0] * r[0][1] + u[1][1] * r[1][1],
            ],
        ];
        // ρ' = m U†
        let p00 = m[0][0] * u[0][0].conj() + m[0][1] * u[0][1].conj();
        let p01 = m[0][0] * u[1][0].conj() + m[0][1] * u[1][1].conj();
        let p11 = m[1][0] * u[1][0].conj() + m[1][1] * u[1][1].conj();
        self.rho = [
            [Complex64::new(p00.re, 0.0), p01],
            [p01.conj(), Complex64::new(p11.re, 0.0)],
        ];
    }
}

/// Evolves `state` through one segment: `U ρ U†` followed by T₁ relaxation
/// over the segment duration.
pub fn propagate_segment(state: &SpinState, seg: &Segment, relax: Relaxation) -> Result<SpinState> {
    seg.validate()?;
    state.validate()?;
    let mut out = *state;
    out.apply_unitary(&seg.unitary());
    out.relax(relax, seg.duration);
    debug_assert!(out.validate().is_ok(), "state invariants violated");
    Ok(out)
}

/// Bloch-vector form of [`SpinState`], used on hot loops.
///
/// Rotations use Rodrigues' formula; it is the SO(3) image of the SU(2)
/// propagator above and agrees with it to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bloch(pub [f64; 3]);

impl Bloch {
    pub fn from_state(s: &SpinState) -> Self {
        Bloch(s.bloch())
    }

    pub fn to_state(self) -> SpinState {
        SpinState::from_bloch_unchecked(self.0)
    }

    pub fn p0(&self) -> f64 {
        0.5 * (1.0 + self.0[2])
    }

    /// Rotation generated by `(c·σ)/2` for time `t`.
    #[inline]
    pub fn rotate(&mut self, c: [f64; 3], t: f64) {
        let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        if norm == 0.0 {
            return;
        }
        let (s, co) = (norm * t).sin_cos();
        let n = [c[0] / norm, c[1] / norm, c[2] / norm];
        let r = self.0;
        let dot = n[0] * r[0] + n[1] * r[1] + n[2] * r[2];
        let cross = [
            n[1] * r[2] - n[2] * r[1],
            n[2] * r[0] - n[0] * r[2],
            n[0] * r[1] - n[1] * r[0],
        ];
        let k = dot * (1.0 - co);
        self.0 = [
            r[0] * co + cross[0] * s + n[0] * k,
            r[1] * co + cross[1] * s + n[1] * k,
            r[2] * co + cross[2] * s + n[2] * k,
        ];
    }

    /// Rotation about z by `angle` (accumulated `∫c_z dt`).
    #[inline]
    pub fn rotate_z(&mut self, angle: f64) {
        let (s, c) = angle.sin_cos();
        let [x, y, z] = self.0;
        self.0 = [x * c - y * s, x * s + y * c, z];
    }

    #[inline]
    pub fn relax(&mut self, factors: (f64, f64)) {
        self.0[0] *= factors.0;
        self.0[1] *= factors.0;
        self.0[2] *= factors.1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_hamiltonian_is_identity() {
        let seg = Segment::new(3.7e-6, [0.0, 0.0, 0.0]).unwrap();
        let out = propagate_segment(&SpinState::ground(), &seg, Relaxation::none()).unwrap();
        assert_eq!(out, SpinState::ground());
    }

    #[test]
    fn resonant_pi_pulse_inverts() {
        let omega = 2.0 * PI * 8.5e6;
        let seg = Segment::new(PI / omega, [omega, 0.0, 0.0]).unwrap();
        let out = propagate_segment(&SpinState::ground(), &seg, Relaxation::none()).unwrap();
        assert!((out.p0() - 0.0).abs() < 1e-10);
        assert!((out.matrix()[1][1].re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn relaxation_matches_rate_equation() {
        // Symmetric rates γ↑ = γ↓ = 1/(2T₁): dP₁/dt = −(P₁ − P₀)/(2T₁),
        // so P₁(t) = ½ + ½·exp(−t/T₁). At t = T₁ ln 2 that is 0.75.
        let t1 = 87.35e-6;
        let seg = Segment::new(t1 * 2f64.ln(), [0.0; 3]).unwrap();
        let out = propagate_segment(&SpinState::excited(), &seg, Relaxation::t1(t1)).unwrap();
        assert!((out.matrix()[1][1].re - 0.75).abs() < 1e-12);
    }

    #[test]
    fn non_finite_coefficient_rejected() {
        let err = Segment::new(1e-9, [f64::NAN, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidSegment(_)));
        let seg = Segment {
            duration: 1e-9,
            coeffs: [f64::INFINITY, 0.0, 0.0],
        };
        assert!(matches!(
            propagate_segment(&SpinState::ground(), &seg, Relaxation::none()),
            Err(Error::InvalidSegment(_))
        ));
    }

    #[test]
    fn invalid_state_rejected() {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        assert!(matches!(
            SpinState::from_matrix([[one, zero], [zero, one]]),
            Err(Error::InvalidState(_))
        ));
        let bad = SpinState::from_bloch_unchecked([0.0, 0.0, 1.5]);
        let seg = Segment::new(1e-9, [0.0; 3]).unwrap();
        assert!(matches!(
            propagate_segment(&bad, &seg, Relaxation::none()),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn bloch_rotation_matches_su2() {
        let seg = Segment::new(37e-9, [3.1e7, -1.7e7, 0.9e7]).unwrap();
        let start = SpinState::from_bloch([0.3, -0.5, 0.6]).unwrap();
        let exact = propagate_segment(&start, &seg, Relaxation::none()).unwrap();
        let mut b = Bloch::from_state(&start);
        b.rotate(seg.coeffs, seg.duration);
        for (a, e) in b.0.iter().zip(exact.bloch()) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn channels_differ_only_in_transverse_rate() {
        let t1 = 10e-6;
        let sym = Relaxation::t1(t1).factors(t1);
        let dep = Relaxation {
            t1,
            channel: RelaxationChannel::Depolarizing,
        }
        .factors(t1);
        assert!((sym.1 - dep.1).abs() < 1e-15);
        assert!((sym.0 - (-0.5f64).exp()).abs() < 1e-15);
        assert!((dep.0 - (-1f64).exp()).abs() < 1e-15);
    }
}
