//! Propagation of a spin through a sampled control waveform with noise.
//!
//! Coefficients follow the segment convention `H = (c·σ)/2`:
//!
//! * rotating frame: `c = (Ω' cos φ, Ω' sin φ, δ_z + f(t))`
//! * lab frame: `c = (2Ω' cos(ω_c t + φ), 0, ω₀ + δ_z + f(t))`
//!
//! with `Ω' = Ω·(1 + ε + δ_x/Ω_nom)` for a static fractional error ε and
//! amplitude noise δ_x, and `f(t) = 2γb cos(ω_s t + θ)` an optional AC
//! target field timed from the decoupling-window start.
//!
//! Undriven stretches only rotate about z, which commutes with the
//! relaxation channel, so they are accumulated and applied in one step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseTrajectory;
use crate::spin::{Bloch, Frame, Relaxation, SpinState, SpinSystem};
use crate::waveform::ControlWaveform;

/// Minimum samples per fastest period.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 20.0;

/// Oscillating target field `γb·cos(ω_s t + θ)` coupled through σ_z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetField {
    /// Signal angular frequency, rad/s.
    pub omega_s: f64,
    /// Amplitude as γb, rad/s.
    pub gamma_b: f64,
    /// Phase at the decoupling-window start, rad.
    pub theta: f64,
}

impl TargetField {
    pub fn new(omega_s: f64, gamma_b: f64, theta: f64) -> Result<Self> {
        let f = Self { omega_s, gamma_b, theta };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_s.is_finite() && self.omega_s > 0.0) {
            return Err(Error::param("omega_s", "must be finite and > 0"));
        }
        if !(self.gamma_b.is_finite() && self.gamma_b >= 0.0) {
            return Err(Error::param("gamma_b", "must be finite and >= 0"));
        }
        if !self.theta.is_finite() {
            return Err(Error::param("theta", "must be finite"));
        }
        Ok(())
    }
}

/// Rotating-frame drive coefficients `c` for amplitude Ω and phase φ, i.e.
/// `H = (Ω/2)(cos φ σ_x + sin φ σ_y)`.
pub fn drive_coefficients(amplitude: f64, phase: f64) -> [f64; 3] {
    let (s, c) = phase.sin_cos();
    [amplitude * c, amplitude * s, 0.0]
}

/// Rotating-frame copy of a lab-frame waveform. Counter-rotating terms are
/// dropped and the RWA error scale `Ω_peak/ω₀` is recorded.
pub fn to_rotating_frame(wf_lab: &ControlWaveform, sys: &SpinSystem) -> Result<ControlWaveform> {
    sys.validate()?;
    wf_lab.validate()?;
    let carrier = wf_lab.carrier.ok_or(Error::MissingCarrier)?;
    if (carrier - sys.omega0).abs() > 1e-9 * sys.omega0 {
        return Err(Error::param("carrier", "must equal the transition frequency omega0"));
    }
    let mut wf = wf_lab.clone();
    wf.carrier = None;
    wf.rwa_error = Some(wf_lab.peak_amplitude() / sys.omega0);
    Ok(wf)
}

#[derive(Debug, Clone, Copy)]
enum Event {
    /// Held drive up to `end`.
    Run { end: f64, amp: f64, phase: f64 },
    Ideal { angle: f64, phase: f64 },
}

/// A waveform resolved against a spin system, ready to be evolved under
/// many noise realisations.
#[derive(Debug, Clone)]
pub struct Program {
    events: Vec<Event>,
    duration: f64,
    nominal_rabi: f64,
    lab_carrier: Option<f64>,
    base_z: f64,
    relax: Relaxation,
    field: Option<TargetField>,
    field_t0: f64,
    eps: f64,
}

impl Program {
    pub fn new(wf: &ControlWaveform, sys: &SpinSystem, field: Option<TargetField>) -> Result<Self> {
        sys.validate()?;
        wf.validate()?;
        let peak = wf.peak_amplitude();
        let (lab_carrier, base_z) = match sys.frame {
            Frame::Rotating => {
                if wf.carrier.is_some() {
                    return Err(Error::param(
                        "carrier",
                        "rotating-frame propagation needs a carrier-free waveform",
                    ));
                }
                if peak > 0.0 && wf.dt > 2.0 * PI / (MIN_SAMPLES_PER_PERIOD * peak) * (1.0 + 1e-9) {
                    return Err(Error::UndersampledWaveform(format!(
                        "dt = {:e} s resolves fewer than {MIN_SAMPLES_PER_PERIOD} samples per Rabi period",
                        wf.dt
                    )));
                }
                (None, 0.0)
            }
            Frame::Lab => {
                let carrier = wf.carrier.ok_or(Error::MissingCarrier)?;
                if !wf.ideal_pulses.is_empty() {
                    return Err(Error::param(
                        "ideal_pulses",
                        "instantaneous pulses require the rotating frame",
                    ));
                }
                let fastest = carrier.max(sys.omega0);
                if wf.dt > 2.0 * PI / (MIN_SAMPLES_PER_PERIOD * fastest) * (1.0 + 1e-9) {
                    return Err(Error::UndersampledWaveform(format!(
                        "dt = {:e} s resolves fewer than {MIN_SAMPLES_PER_PERIOD} samples per carrier period",
                        wf.dt
                    )));
                }
                (Some(carrier), sys.omega0)
            }
        };
        if let Some(f) = field {
            f.validate()?;
            if peak > 0.0 && wf.dt > 2.0 * PI / (MIN_SAMPLES_PER_PERIOD * f.omega_s) * (1.0 + 1e-9) {
                return Err(Error::UndersampledWaveform(format!(
                    "dt = {:e} s resolves fewer than {MIN_SAMPLES_PER_PERIOD} samples per signal period",
                    wf.dt
                )));
            }
        }

        let mut ideal: Vec<_> = wf.ideal_pulses.clone();
        ideal.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut ideal = ideal.into_iter().peekable();
        let mut events = Vec::with_capacity(wf.len() / 8 + ideal.len() + 2);
        let n = wf.len();
        let mut k = 0;
        while k < n {
            let (amp, phase) = (wf.amplitude[k], wf.phase[k]);
            let mut j = k + 1;
            // With a carrier each sample needs its own phase average.
            if lab_carrier.is_none() || amp == 0.0 {
                while j < n && wf.amplitude[j] == amp && (amp == 0.0 || wf.phase[j] == phase) {
                    j += 1;
                }
            }
            let start = k as f64 * wf.dt;
            let end = j as f64 * wf.dt;
            while let Some(p) = ideal.next_if(|p| p.time <= start) {
                events.push(Event::Ideal { angle: p.angle, phase: p.phase });
            }
            while let Some(p) = ideal.next_if(|p| p.time < end) {
                events.push(Event::Run { end: p.time, amp, phase });
                events.push(Event::Ideal { angle: p.angle, phase: p.phase });
            }
            events.push(Event::Run { end, amp, phase });
            k = j;
        }
        for p in ideal {
            events.push(Event::Ideal { angle: p.angle, phase: p.phase });
        }

        Ok(Self {
            events,
            duration: wf.duration(),
            nominal_rabi: wf.nominal_rabi,
            lab_carrier,
            base_z,
            relax: sys.relaxation(),
            field,
            field_t0: wf.window().0,
            eps: 1e-6 * wf.dt,
        })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Exact integral of the σ_z field coefficient over `[a, b]`.
    #[inline]
    fn field_integral(&self, a: f64, b: f64) -> f64 {
        match self.field {
            Some(f) if f.gamma_b != 0.0 => {
                let pa = f.omega_s * (a - self.field_t0) + f.theta;
                let pb = f.omega_s * (b - self.field_t0) + f.theta;
                2.0 * f.gamma_b * (pb.sin() - pa.sin()) / f.omega_s
            }
            _ => 0.0,
        }
    }

    /// Evolves a Bloch vector under one noise realisation.
    pub fn evolve(&self, start: Bloch, noise: &NoiseTrajectory) -> Result<Bloch> {
        noise.validate()?;
        if noise.is_empty() || noise.duration() < self.duration * (1.0 - 1e-12) {
            return Err(Error::param("noise_traj", "shorter than the waveform"));
        }
        let ndt = noise.dt;
        let last = noise.len() - 1;
        let scale_frac = 1.0 + noise.amplitude_frac;
        let inv_nom = if self.nominal_rabi > 0.0 { 1.0 / self.nominal_rabi } else { 0.0 };

        let mut b = start;
        let mut z_angle = 0.0;
        let mut free_time = 0.0;
        let mut cache_h = f64::NAN;
        let mut cache_f = (1.0, 1.0);
        let relax_on = self.relax.is_active();

        let mut t = 0.0;
        let mut j = 0usize;
        let mut nb = ndt;
        let flush = |b: &mut Bloch, z_angle: &mut f64, free_time: &mut f64| {
            if *z_angle != 0.0 {
                b.rotate_z(*z_angle);
                *z_angle = 0.0;
            }
            if *free_time > 0.0 && relax_on {
                b.relax(self.relax.factors(*free_time));
            }
            *free_time = 0.0;
        };

        for ev in &self.events {
            match *ev {
                Event::Ideal { angle, phase } => {
                    flush(&mut b, &mut z_angle, &mut free_time);
                    let c = drive_coefficients(angle * scale_frac, phase);
                    b.rotate(c, 1.0);
                }
                Event::Run { end, amp, phase } => {
                    while t < end - self.eps {
                        let (seg_end, crosses) = if nb < end - self.eps {
                            (nb, true)
                        } else {
                            (end, nb <= end + self.eps)
                        };
                        let h = seg_end - t;
                        let idx = j.min(last);
                        let dz = noise.delta_z[idx];
                        if amp == 0.0 {
                            z_angle += (self.base_z + dz) * h + self.field_integral(t, seg_end);
                            free_time += h;
                        } else {
                            flush(&mut b, &mut z_angle, &mut free_time);
                            let a = amp * (scale_frac + noise.delta_x[idx] * inv_nom);
                            let cz = self.base_z + dz + self.field_integral(t, seg_end) / h;
                            let c = match self.lab_carrier {
                                None => {
                                    let (s, co) = phase.sin_cos();
                                    [a * co, a * s, cz]
                                }
                                Some(wc) => {
                                    let pa = wc * t + phase;
                                    let pb = wc * seg_end + phase;
                                    [2.0 * a * (pb.sin() - pa.sin()) / (wc * h), 0.0, cz]
                                }
                            };
                            b.rotate(c, h);
                            if relax_on {
                                if h != cache_h {
                                    cache_h = h;
                                    cache_f = self.relax.factors(h);
                                }
                                b.relax(cache_f);
                            }
                        }
                        t = seg_end;
                        if crosses {
                            j += 1;
                            nb = (j + 1) as f64 * ndt;
                        }
                    }
                    t = t.max(end);
                }
            }
        }
        flush(&mut b, &mut z_angle, &mut free_time);
        Ok(b)
    }
}

/// Propagates `state` through `wf` under one noise realisation.
pub fn propagate_waveform(
    state: &SpinState,
    wf: &ControlWaveform,
    sys: &SpinSystem,
    noise_traj: &NoiseTrajectory,
) -> Result<SpinState> {
    propagate_waveform_with_field(state, wf, sys, noise_traj, None)
}

/// As [`propagate_waveform`] with an optional AC target field.
pub fn propagate_waveform_with_field(
    state: &SpinState,
    wf: &ControlWaveform,
    sys: &SpinSystem,
    noise_traj: &NoiseTrajectory,
    field: Option<TargetField>,
) -> Result<SpinState> {
    state.validate()?;
    let program = Program::new(wf, sys, field)?;
    let out = program.evolve(Bloch::from_state(state), noise_traj)?.to_state();
    debug_assert!(out.validate().is_ok(), "state invariants violated");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{compile_ccdd, compile_pulsed, CcddSpec, PulseStrength, PulseTiming, PulsedScheme, PulsedSpec};
    use crate::spin::{propagate_segment, Segment};
    use crate::units::{mhz, us};

    fn rot(t1: f64) -> SpinSystem {
        SpinSystem::rotating(2.0 * PI * 2.87e9, t1).unwrap()
    }

    fn quiet(wf: &ControlWaveform) -> NoiseTrajectory {
        NoiseTrajectory::zero(wf.duration(), wf.duration())
    }

    #[test]
    fn zero_waveform_leaves_state() {
        let wf = ControlWaveform::new(1e-9, vec![0.0; 100], vec![0.0; 100]).unwrap();
        let s = SpinState::from_bloch([0.6, 0.0, 0.8]).unwrap();
        let out = propagate_waveform(&s, &wf, &rot(f64::INFINITY), &quiet(&wf)).unwrap();
        for (a, b) in out.bloch().iter().zip(s.bloch()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn half_rabi_cycle_inverts() {
        let w = mhz(8.06);
        let n = 400;
        let dt = (1.0 / (2.0 * 8.06e6)) / n as f64;
        let wf = ControlWaveform::new(dt, vec![w; n], vec![0.0; n]).unwrap();
        let out = propagate_waveform(&SpinState::ground(), &wf, &rot(f64::INFINITY), &quiet(&wf)).unwrap();
        assert!(out.p0() < 1e-12);
    }

    #[test]
    fn matches_segment_by_segment_propagation() {
        let wf = compile_ccdd(&CcddSpec::new(mhz(8.06), 0.1, us(0.5))).unwrap();
        let sys = rot(us(20.0));
        let noise = crate::noise::make_trajectory(
            &crate::noise::NoiseModel {
                detuning_ou: vec![crate::noise::OuProcessParams::new(1e6, 1e-7).unwrap()],
                ..crate::noise::NoiseModel::silent(5)
            },
            wf.duration(),
            wf.dt,
            0,
        )
        .unwrap();
        let fast = propagate_waveform(&SpinState::ground(), &wf, &sys, &noise).unwrap();
        let mut s = SpinState::ground();
        for k in 0..wf.len() {
            let c = drive_coefficients(wf.amplitude[k], wf.phase[k]);
            let seg = Segment::new(wf.dt, [c[0], c[1], noise.delta_z[k]]).unwrap();
            s = propagate_segment(&s, &seg, sys.relaxation()).unwrap();
        }
        for (a, b) in fast.bloch().iter().zip(s.bloch()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn ideal_hahn_echo_refocuses_static_detuning() {
        let spec = PulsedSpec::new(PulsedScheme::HahnEcho, 1, PulseStrength::Ideal, PulseTiming::TotalTime(us(3.0)));
        let wf = compile_pulsed(&spec).unwrap();
        let mut noise = quiet(&wf);
        noise.delta_z.iter_mut().for_each(|v| *v = 2.3e6);
        let out = propagate_waveform(&SpinState::ground(), &wf, &rot(f64::INFINITY), &noise).unwrap();
        assert!((out.p0() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lab_frame_agrees_with_rotating_frame() {
        let rabi = mhz(8.06);
        let omega0 = 1e3 * rabi;
        let lab = SpinSystem::new(omega0, f64::INFINITY, Frame::Lab).unwrap();
        let spec = PulsedSpec::new(PulsedScheme::Ramsey, 1, PulseStrength::Rabi(rabi), PulseTiming::Tau(us(0.05)));
        let base = compile_pulsed(&spec).unwrap();
        // Detune the readout so the final population is not an extremum.
        let mut base = base;
        let len = base.len();
        base.phase[len - 5..].iter_mut().for_each(|p| *p += 0.7);
        let sub = (base.dt * omega0 * MIN_SAMPLES_PER_PERIOD / (2.0 * PI)).ceil() as usize;
        let wf_lab = base.with_carrier(omega0, sub).unwrap();
        let wf_rot = to_rotating_frame(&wf_lab, &lab).unwrap();
        assert!(wf_rot.rwa_error.unwrap() <= 1e-3 + 1e-15);
        let p_lab = propagate_waveform(&SpinState::ground(), &wf_lab, &lab, &quiet(&wf_lab)).unwrap().p0();
        let rot_sys = SpinSystem::rotating(omega0, f64::INFINITY).unwrap();
        let p_rot = propagate_waveform(&SpinState::ground(), &wf_rot, &rot_sys, &quiet(&wf_rot)).unwrap().p0();
        assert!((p_lab - p_rot).abs() < 1e-3, "lab {p_lab} rot {p_rot}");
    }

    #[test]
    fn undersampled_and_missing_carrier_rejected() {
        let wf = ControlWaveform::new(1e-7, vec![mhz(8.0); 10], vec![0.0; 10]).unwrap();
        assert!(matches!(
            Program::new(&wf, &rot(f64::INFINITY), None),
            Err(Error::UndersampledWaveform(_))
        ));
        let lab = SpinSystem::new(mhz(100.0), f64::INFINITY, Frame::Lab).unwrap();
        assert!(matches!(Program::new(&wf, &lab, None), Err(Error::MissingCarrier)));
        assert!(matches!(to_rotating_frame(&wf, &lab), Err(Error::MissingCarrier)));
    }

    #[test]
    fn rotating_frame_coefficients() {
        let c = drive_coefficients(mhz(8.06), 0.0);
        assert_eq!(c, [mhz(8.06), 0.0, 0.0]);
        let spec = CcddSpec::new(mhz(8.06), 0.1, us(1.0));
        assert_eq!(drive_coefficients(spec.omega1, spec.phase_at(0.0)), [mhz(8.06), 0.0, 0.0]);
    }

    #[test]
    fn field_integral_is_exact_on_free_evolution() {
        // Ramsey with instantaneous pulses: accumulated angle is ∫2γb cos.
        let spec = PulsedSpec::new(PulsedScheme::Ramsey, 1, PulseStrength::Ideal, PulseTiming::TotalTime(us(0.3)));
        let wf = compile_pulsed(&spec).unwrap().with_readout(crate::waveform::Readout::Quadrature);
        let f = TargetField::new(mhz(1.0), 2.0 * PI * 1e4, 0.0).unwrap();
        let out = propagate_waveform_with_field(&SpinState::ground(), &wf, &rot(f64::INFINITY), &quiet(&wf), Some(f)).unwrap();
        let phi = 2.0 * f.gamma_b * (f.omega_s * us(0.3)).sin() / f.omega_s;
        // Quadrature readout maps the accumulated angle to P0 = (1 ∓ sin φ)/2.
        assert!(((2.0 * out.p0() - 1.0).abs() - phi.sin().abs()).abs() < 1e-12);
    }
}
