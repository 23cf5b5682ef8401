//! Sampled control waveforms and their file exports.
//!
//! A [`ControlWaveform`] is a zero-order-hold sequence of drive amplitude
//! Ω(t) and phase φ(t) on a uniform grid. Sample `k` holds on
//! `[k·dt, (k+1)·dt)`. In the rotating frame the drive Hamiltonian is
//! `(Ω/2)(cos φ σ_x + sin φ σ_y)`; with a carrier ω_c it is the lab-frame
//! field `Ω cos(ω_c t + φ) σ_x`.
//!
//! Pulses in the infinite-power limit are carried separately as
//! [`IdealPulse`]s at exact times.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic prefix of the binary I/Q export.
pub const IQ_MAGIC: &[u8; 8] = b"NVDDIQ01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    /// Start of the decoupling window (preparation pulse finished).
    WindowStart,
    /// End of the decoupling window (readout pulse begins).
    WindowEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub time: f64,
    pub kind: MarkerKind,
}

/// Instantaneous rotation by `angle` about `(cos φ, sin φ, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealPulse {
    pub time: f64,
    pub angle: f64,
    pub phase: f64,
}

/// Which quadrature the final π/2 pulse maps onto the |0⟩ population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Noiseless evolution ends in |0⟩.
    #[default]
    Bright,
    /// Noiseless evolution ends in |1⟩.
    Dark,
    /// Phase-sensitive readout: noiseless evolution ends on the equator and
    /// small accumulated phases appear linearly in P₀.
    Quadrature,
}

impl Readout {
    fn offset(self) -> f64 {
        match self {
            Readout::Bright => 0.0,
            Readout::Dark => std::f64::consts::PI,
            Readout::Quadrature => std::f64::consts::FRAC_PI_2,
        }
    }
}

/// Location of the final π/2 pulse and its bright-quadrature phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReadoutPulse {
    Samples { start: usize, len: usize, bright_phase: f64 },
    Ideal { index: usize, bright_phase: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlWaveform {
    pub dt: f64,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    /// Lab-frame carrier ω_c, rad/s. `None` in the rotating frame.
    pub carrier: Option<f64>,
    pub markers: Vec<Marker>,
    pub ideal_pulses: Vec<IdealPulse>,
    pub readout: Option<ReadoutPulse>,
    /// Drive strength that static fractional amplitude errors scale with.
    pub nominal_rabi: f64,
    /// Rotating-wave error scale Ω/ω₀, set by frame conversion.
    pub rwa_error: Option<f64>,
}

impl ControlWaveform {
    pub fn new(dt: f64, amplitude: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        let nominal_rabi = amplitude.iter().copied().fold(0.0, f64::max);
        let wf = Self {
            dt,
            amplitude,
            phase,
            carrier: None,
            markers: Vec::new(),
            ideal_pulses: Vec::new(),
            readout: None,
            nominal_rabi,
            rwa_error: None,
        };
        wf.validate()?;
        Ok(wf)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", "must be finite and > 0"));
        }
        if self.amplitude.len() != self.phase.len() {
            return Err(Error::param("phase", "length differs from amplitude"));
        }
        if self.amplitude.is_empty() {
            return Err(Error::param("amplitude", "waveform is empty"));
        }
        if self.amplitude.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::param("amplitude", "samples must be finite and >= 0"));
        }
        if self.phase.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("phase", "samples must be finite"));
        }
        if let Some(c) = self.carrier {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::param("carrier", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.len() as f64
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.amplitude.iter().copied().fold(0.0, f64::max)
    }

    pub fn marker(&self, kind: MarkerKind) -> Option<f64> {
        self.markers.iter().find(|m| m.kind == kind).map(|m| m.time)
    }

    /// Decoupling window `[start, end)`; the whole waveform when unmarked.
    pub fn window(&self) -> (f64, f64) {
        (
            self.marker(MarkerKind::WindowStart).unwrap_or(0.0),
            self.marker(MarkerKind::WindowEnd).unwrap_or(self.duration()),
        )
    }

    /// Number of finite-amplitude pulses inside the decoupling window.
    pub fn window_pulse_count(&self) -> usize {
        let (t0, t1) = self.window();
        let mut count = 0;
        let mut on = false;
        for (k, &a) in self.amplitude.iter().enumerate() {
            let mid = (k as f64 + 0.5) * self.dt;
            let inside = mid >= t0 && mid < t1;
            let now = inside && a > 0.0;
            if now && !on {
                count += 1;
            }
            on = now;
        }
        count
    }

    /// Copy with the final π/2 pulse set to the requested quadrature.
    pub fn with_readout(&self, readout: Readout) -> Self {
        let mut wf = self.clone();
        match wf.readout {
            Some(ReadoutPulse::Samples { start, len, bright_phase }) => {
                let ph = bright_phase + readout.offset();
                wf.phase[start..start + len].iter_mut().for_each(|p| *p = ph);
            }
            Some(ReadoutPulse::Ideal { index, bright_phase }) => {
                wf.ideal_pulses[index].phase = bright_phase + readout.offset();
            }
            None => {}
        }
        wf
    }

    /// Lab-frame copy: each sample is split into `subdivide` sub-samples that
    /// keep the held amplitude and phase, and the carrier is attached.
    pub fn with_carrier(&self, carrier: f64, subdivide: usize) -> Result<Self> {
        if subdivide == 0 {
            return Err(Error::param("subdivide", "must be >= 1"));
        }
        if !self.ideal_pulses.is_empty() {
            return Err(Error::param(
                "ideal_pulses",
                "instantaneous pulses have no lab-frame representation",
            ));
        }
        let mut wf = self.clone();
        wf.dt = self.dt / subdivide as f64;
        wf.amplitude = self
            .amplitude
            .iter()
            .flat_map(|&a| std::iter::repeat(a).take(subdivide))
            .collect();
        wf.phase = self
            .phase
            .iter()
            .flat_map(|&p| std::iter::repeat(p).take(subdivide))
            .collect();
        wf.readout = match self.readout {
            Some(ReadoutPulse::Samples { start, len, bright_phase }) => Some(ReadoutPulse::Samples {
                start: start * subdivide,
                len: len * subdivide,
                bright_phase,
            }),
            other => other,
        };
        wf.carrier = Some(carrier);
        wf.validate()?;
        Ok(wf)
    }

    /// CSV with header `t_us,omega_mhz,phase_rad`, one row per sample start.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_us,omega_mhz,phase_rad")?;
        for (k, (a, p)) in self.amplitude.iter().zip(&self.phase).enumerate() {
            let t = k as f64 * self.dt;
            writeln!(w, "{},{},{}", t * 1e6, crate::units::to_mhz(*a), p)?;
        }
        Ok(())
    }

    /// Binary I/Q export, all fields little-endian:
    ///
    /// | offset | type      | content                                   |
    /// |--------|-----------|-------------------------------------------|
    /// | 0      | `[u8; 8]` | magic `NVDDIQ01`                           |
    /// | 8      | `u64`     | sample count `n`                          |
    /// | 16     | `f64`     | `dt` in seconds                           |
    /// | 24     | `f64`     | carrier in rad/s, `NaN` when absent       |
    /// | 32     | `2n × f64`| interleaved `I = Ω cos φ`, `Q = Ω sin φ` (rad/s) |
    pub fn write_iq<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(IQ_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.carrier.unwrap_or(f64::NAN).to_le_bytes())?;
        for (a, p) in self.amplitude.iter().zip(&self.phase) {
            let (s, c) = p.sin_cos();
            w.write_all(&(a * c).to_le_bytes())?;
            w.write_all(&(a * s).to_le_bytes())?;
        }
        Ok(())
    }
}

/// Decoded contents of an I/Q file.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSamples {
    pub dt: f64,
    pub carrier: Option<f64>,
    pub iq: Vec<(f64, f64)>,
}

pub fn read_iq<R: Read>(mut r: R) -> io::Result<IqSamples> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != IQ_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad I/Q magic"));
    }
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let n = u64::from_le_bytes(b) as usize;
    r.read_exact(&mut b)?;
    let dt = f64::from_le_bytes(b);
    r.read_exact(&mut b)?;
    let carrier = f64::from_le_bytes(b);
    let mut iq = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b)?;
        let i = f64::from_le_bytes(b);
        r.read_exact(&mut b)?;
        iq.push((i, f64::from_le_bytes(b)));
    }
    Ok(IqSamples {
        dt,
        carrier: (!carrier.is_nan()).then_some(carrier),
        iq,
    })
}

/// Root-mean-square Rabi frequency `sqrt(⟨Ω²⟩)` over the decoupling window.
///
/// Infinite when the window contains instantaneous pulses.
pub fn effective_rabi(wf: &ControlWaveform) -> f64 {
    let (t0, t1) = wf.window();
    if wf
        .ideal_pulses
        .iter()
        .any(|p| p.time > t0 && p.time < t1)
    {
        return f64::INFINITY;
    }
    let span = t1 - t0;
    if span <= 0.0 {
        return 0.0;
    }
    let mut energy = 0.0;
    for (k, &a) in wf.amplitude.iter().enumerate() {
        let lo = (k as f64 * wf.dt).max(t0);
        let hi = ((k + 1) as f64 * wf.dt).min(t1);
        if hi > lo {
            energy += a * a * (hi - lo);
        }
    }
    (energy / span).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_drive_has_effective_rabi_equal_to_amplitude() {
        let wf = ControlWaveform::new(1e-9, vec![3.0e7; 500], vec![0.0; 500]).unwrap();
        assert!((effective_rabi(&wf) - 3.0e7).abs() < 1e-6);
    }

    #[test]
    fn iq_round_trip_is_bit_exact() {
        let wf = ControlWaveform::new(
            2.5e-9,
            vec![0.0, 1.0e7, 2.0e7, 0.5],
            vec![0.0, 0.3, -1.2, 3.0],
        )
        .unwrap();
        let mut buf = Vec::new();
        wf.write_iq(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 16 * 4);
        assert_eq!(&buf[..8], IQ_MAGIC);
        let back = read_iq(&buf[..]).unwrap();
        assert_eq!(back.dt.to_bits(), wf.dt.to_bits());
        assert_eq!(back.carrier, None);
        for ((i, q), (a, p)) in back.iq.iter().zip(wf.amplitude.iter().zip(&wf.phase)) {
            assert_eq!(i.to_bits(), (a * p.cos()).to_bits());
            assert_eq!(q.to_bits(), (a * p.sin()).to_bits());
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_sample() {
        let wf = ControlWaveform::new(1e-9, vec![0.0; 3], vec![0.0; 3]).unwrap();
        let mut buf = Vec::new();
        wf.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("t_us,omega_mhz,phase_rad\n"));
    }

    #[test]
    fn rejects_mismatched_or_negative_samples() {
        assert!(ControlWaveform::new(1e-9, vec![1.0; 3], vec![0.0; 2]).is_err());
        assert!(ControlWaveform::new(1e-9, vec![-1.0], vec![0.0]).is_err());
        assert!(ControlWaveform::new(0.0, vec![1.0], vec![0.0]).is_err());
    }
}
