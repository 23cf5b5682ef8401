use std::f64::consts::PI;

use proptest::prelude::*;

use nvdecouple::engine::{run_experiment, ExperimentPlan, SequenceFamily};
use nvdecouple::noise::NoiseModel;
use nvdecouple::sequences::{compile_ccdd, compile_pulsed, CcddSpec, PulseStrength, PulseTiming, PulsedScheme, PulsedSpec};
use nvdecouple::spin::SpinSystem;
use nvdecouple::units::{mhz, us};
use nvdecouple::waveform::{effective_rabi, ControlWaveform};

/// Phases of the contiguous driven runs inside the decoupling window.
fn window_pulse_phases(wf: &ControlWaveform) -> Vec<f64> {
    let (t0, t1) = wf.window();
    let mut out = Vec::new();
    let mut driven = false;
    for k in 0..wf.len() {
        let mid = (k as f64 + 0.5) * wf.dt;
        let on = mid > t0 && mid < t1 && wf.amplitude[k] > 0.0;
        if on && !driven {
            out.push(wf.phase[k]);
        }
        driven = on;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn xy8_blocks_are_palindromes(n in 1u32..8, rabi_mhz in 5.0..20.0f64, extra_us in 0.5..10.0f64) {
        let rabi = mhz(rabi_mhz);
        let spec = PulsedSpec::new(PulsedScheme::Xy8, n, PulseStrength::Rabi(rabi), PulseTiming::TotalTime(0.0));
        let t = spec.pulse_count() as f64 * PI / rabi + us(extra_us);
        let spec = PulsedSpec { timing: PulseTiming::TotalTime(t), ..spec };
        let wf = compile_pulsed(&spec).unwrap();
        let phases = window_pulse_phases(&wf);
        prop_assert_eq!(phases.len(), 8 * n as usize);
        for block in phases.chunks(8) {
            for k in 0..4 {
                prop_assert!((block[k] - block[7 - k]).abs() < 1e-12);
            }
        }
        prop_assert_eq!(&wf, &compile_pulsed(&spec).unwrap());
    }

    #[test]
    fn compiled_window_matches_requested_length(
        scheme in prop_oneof![Just(PulsedScheme::HahnEcho), Just(PulsedScheme::Cpmg), Just(PulsedScheme::Xy8)],
        n in 1u32..6,
        rabi_mhz in 5.0..20.0f64,
        extra_us in 0.1..10.0f64,
    ) {
        let rabi = mhz(rabi_mhz);
        let base = PulsedSpec::new(scheme, n, PulseStrength::Rabi(rabi), PulseTiming::TotalTime(0.0));
        let t = base.pulse_count() as f64 * PI / rabi + us(extra_us);
        let wf = compile_pulsed(&PulsedSpec { timing: PulseTiming::TotalTime(t), ..base }).unwrap();
        let (a, b) = wf.window();
        prop_assert!(((b - a) - t).abs() <= wf.dt * (1.0 + 1e-9));
    }

    #[test]
    fn ccdd_window_matches_requested_length(w1_mhz in 1.0..20.0f64, ratio in 0.01..0.5f64, dur_us in 0.1..20.0f64) {
        let wf = compile_ccdd(&CcddSpec::new(mhz(w1_mhz), ratio, us(dur_us))).unwrap();
        let (a, b) = wf.window();
        prop_assert!(((b - a) - us(dur_us)).abs() <= wf.dt * (1.0 + 1e-9));
    }

    #[test]
    fn ccdd_peak_is_below_pulsed_peak_at_equal_power(n in 1u32..13, rabi_mhz in 5.0..20.0f64, extra_us in 0.5..20.0f64) {
        let rabi = mhz(rabi_mhz);
        let base = PulsedSpec::new(PulsedScheme::Xy8, n, PulseStrength::Rabi(rabi), PulseTiming::TotalTime(0.0));
        let t = base.pulse_count() as f64 * PI / rabi + us(extra_us);
        let pulsed = compile_pulsed(&PulsedSpec { timing: PulseTiming::TotalTime(t), ..base }).unwrap();
        let omega_bar = effective_rabi(&pulsed);
        let ccdd = compile_ccdd(&CcddSpec::new(omega_bar, 0.1, t)).unwrap();
        prop_assert!(effective_rabi(&ccdd) > 0.0);
        prop_assert!(ccdd.peak_amplitude() < pulsed.peak_amplitude());
        prop_assert!((effective_rabi(&ccdd) / omega_bar - 1.0).abs() < 1e-9);
    }
}

/// |2P₀ − 1| after the sequence, averaged over preparations along and
/// across the CPMG pulse axis.
fn contrast(scheme: PulsedScheme, n_cycles: u32, pulses: usize) -> f64 {
    let sys = SpinSystem::rotating(mhz(2870.0), f64::INFINITY).unwrap();
    let noise = NoiseModel {
        amplitude_bias_frac: 0.05,
        ..NoiseModel::silent(1)
    };
    let rabi = mhz(10.0);
    let t = pulses as f64 * (PI / rabi + us(0.2));
    [0.0, PI / 2.0]
        .iter()
        .map(|&prep| {
            let spec = PulsedSpec {
                prep_phase: prep,
                ..PulsedSpec::new(scheme, n_cycles, PulseStrength::Rabi(rabi), PulseTiming::TotalTime(0.0))
            };
            let mut plan = ExperimentPlan::new(sys, noise.clone(), SequenceFamily::Pulsed(spec), vec![t]);
            plan.n_trajectories = 1;
            (2.0 * run_experiment(&plan).unwrap().p0_mean[0] - 1.0).abs()
        })
        .sum::<f64>()
        / 2.0
}

#[test]
fn xy8_tolerates_amplitude_error_better_than_cpmg() {
    for n in [4u32, 6, 8, 12] {
        let pulses = 8 * n as usize;
        let xy8 = contrast(PulsedScheme::Xy8, n, pulses);
        let cpmg = contrast(PulsedScheme::Cpmg, pulses as u32, pulses);
        assert!(xy8 > cpmg, "N = {n}: XY8 {xy8:.4} vs CPMG {cpmg:.4}");
    }
}
