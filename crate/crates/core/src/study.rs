//! Higher-level measurements built on the runner: adaptive sampling of a
//! decay curve, the XY8 cycle sweep, the equal-average-power comparison
//! and the calibration metrics of a noise model.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::analysis::{extract_coherence_time, fit_scaling, CoherenceTime, FitResult};
use crate::engine::{run_experiment, DecayCurve, ExperimentPlan, SequenceFamily, DEFAULT_TRAJECTORIES};
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::sequences::{CcddSpec, PulseStrength, PulseTiming, PulsedScheme, PulsedSpec};
use crate::spin::SpinSystem;

/// Relative fit uncertainty above which a coherence time is not trusted.
pub const RELIABLE_REL_SIGMA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_trajectories: usize,
    /// Trajectories for the pilot run that places the sampling grid.
    pub pilot_trajectories: usize,
    /// Points of a pulsed decay curve.
    pub pulsed_points: usize,
    /// Demodulation windows of a CCDD curve.
    pub ccdd_windows: usize,
    /// Points per CCDD window.
    pub ccdd_window_points: usize,
    /// Grid extent in units of the expected decay time.
    pub span: f64,
    pub workers: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_trajectories: DEFAULT_TRAJECTORIES,
            pilot_trajectories: 200,
            pulsed_points: 24,
            ccdd_windows: 6,
            ccdd_window_points: 10,
            span: 2.5,
            workers: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 || self.pilot_trajectories == 0 {
            return Err(Error::param("n_trajectories", "must be >= 1"));
        }
        if self.pulsed_points < 6 {
            return Err(Error::param("pulsed_points", "need at least 6"));
        }
        if self.ccdd_windows < 3 || self.ccdd_window_points < 4 {
            return Err(Error::param("ccdd_windows", "need 3 windows of 4 points"));
        }
        if !(self.span.is_finite() && self.span > 0.5) {
            return Err(Error::param("span", "must be finite and > 0.5"));
        }
        Ok(())
    }
}

/// Uniform grid from `max(t_min, 0.05·t_guess)` to `span·t_guess`.
pub fn pulsed_grid(t_guess: f64, t_min: f64, span: f64, n: usize) -> Vec<f64> {
    let hi = (span * t_guess).max(t_min * 1.5);
    let lo = (0.05 * t_guess).max(t_min * (1.0 + 1e-6));
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Stroboscopic grid for CCDD: every time is a whole number of Ω₁ periods,
/// grouped into windows that each cover one Ω₂ period and are spread up to
/// `span·t_guess`.
pub fn ccdd_grid(spec: &CcddSpec, t_guess: f64, span: f64, windows: usize, per_window: usize) -> Vec<f64> {
    let p1 = 2.0 * PI / spec.omega1;
    let periods_per_osc = if spec.ratio > 0.0 { 1.0 / spec.ratio } else { per_window as f64 };
    let stride = ((periods_per_osc / per_window as f64).round() as u64).max(1);
    let len = stride * (per_window as u64 - 1);
    // Keep windows well separated so the demodulator can tell them apart.
    let min_gap = len + 4 * stride;
    let last = ((span * t_guess / p1).round() as u64).max(min_gap * (windows as u64 - 1));
    let mut times = Vec::with_capacity(windows * per_window);
    let mut prev_start: Option<u64> = None;
    for w in 0..windows {
        let mut start = (last as f64 * w as f64 / (windows - 1) as f64).round() as u64;
        if let Some(p) = prev_start {
            start = start.max(p + min_gap);
        }
        prev_start = Some(start);
        for j in 0..per_window as u64 {
            let m = start + j * stride;
            if m > 0 {
                times.push(m as f64 * p1);
            }
        }
    }
    times
}

/// A measured curve and its coherence time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub curve: DecayCurve,
    pub coherence: CoherenceTime,
}

fn grid_for(family: &SequenceFamily, t_guess: f64, cfg: &StudyConfig) -> Vec<f64> {
    match family {
        SequenceFamily::Ccdd(spec) => ccdd_grid(spec, t_guess, cfg.span, cfg.ccdd_windows, cfg.ccdd_window_points),
        _ => pulsed_grid(t_guess, family.min_window(), cfg.span, cfg.pulsed_points),
    }
}

fn run_on(
    system: &SpinSystem,
    noise: &NoiseModel,
    family: &SequenceFamily,
    times: Vec<f64>,
    n: usize,
    cfg: &StudyConfig,
) -> Result<Measurement> {
    let mut plan = ExperimentPlan::new(*system, noise.clone(), *family, times);
    plan.n_trajectories = n;
    plan.workers = cfg.workers;
    let curve = run_experiment(&plan)?;
    let coherence = extract_coherence_time(&curve, family)?;
    Ok(Measurement { curve, coherence })
}

/// Pilot run on a grid built from `t_guess`, then the full run on a grid
/// built from the pilot estimate. The pilot estimate is clamped to
/// `[t_guess/8, 8·t_guess]`.
pub fn measure(
    system: &SpinSystem,
    noise: &NoiseModel,
    family: &SequenceFamily,
    t_guess: f64,
    cfg: &StudyConfig,
) -> Result<Measurement> {
    cfg.validate()?;
    if !(t_guess.is_finite() && t_guess > 0.0) {
        return Err(Error::param("t_guess", "must be finite and > 0"));
    }
    let pilot = run_on(system, noise, family, grid_for(family, t_guess, cfg), cfg.pilot_trajectories, cfg);
    let t = match pilot {
        Ok(m) if m.coherence.time.is_finite() && m.coherence.fit.as_ref().is_some_and(|f| f.converged) => {
            m.coherence.time.clamp(t_guess / 8.0, 8.0 * t_guess)
        }
        _ => t_guess,
    };
    run_on(system, noise, family, grid_for(family, t, cfg), cfg.n_trajectories, cfg)
}

pub fn xy8_spec(n_cycles: u32, rabi: f64) -> PulsedSpec {
    PulsedSpec::new(PulsedScheme::Xy8, n_cycles, PulseStrength::Rabi(rabi), PulseTiming::TotalTime(0.0))
}

/// One point of an XY8 cycle sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclePoint {
    pub n_cycles: u32,
    pub measurement: Measurement,
    /// Shortest realisable window, s.
    pub min_window: f64,
}

impl CyclePoint {
    pub fn time(&self) -> f64 {
        self.measurement.coherence.time
    }

    pub fn sigma(&self) -> f64 {
        self.measurement.coherence.sigma
    }

    /// Converged, tight enough, and not limited by the sequence length.
    pub fn is_reliable(&self) -> bool {
        let c = &self.measurement.coherence;
        c.time.is_finite() && c.is_reliable(RELIABLE_REL_SIGMA) && c.time >= self.min_window
    }
}

/// XY8-N at a fixed π-pulse Rabi frequency for each N in `cycles`.
pub fn xy8_sweep(
    system: &SpinSystem,
    noise: &NoiseModel,
    rabi: f64,
    cycles: &[u32],
    t_guess: f64,
    cfg: &StudyConfig,
) -> Result<Vec<CyclePoint>> {
    cycles
        .iter()
        .map(|&n| {
            let family = SequenceFamily::Pulsed(xy8_spec(n, rabi));
            let m = measure(system, noise, &family, t_guess, cfg)?;
            Ok(CyclePoint {
                n_cycles: n,
                measurement: m,
                min_window: 0.0,
            })
        })
        .collect()
}

/// Fits `T₂(N) = T_SE/(N^(−β) + T_SE/T₁)` to the reliable sweep points.
pub fn scaling_fit(points: &[CyclePoint], t_se: f64, t1: f64) -> Result<FitResult> {
    let data: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|p| p.is_reliable())
        .map(|p| (p.n_cycles as f64, p.time(), p.sigma()))
        .collect();
    fit_scaling(&data, t_se, t1)
}

/// XY8 and CCDD at one effective Rabi frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPoint {
    pub omega_bar: f64,
    pub xy8: Vec<CyclePoint>,
    /// Index into `xy8` of the longest reliable T₂.
    pub best: Option<usize>,
    pub ccdd: Measurement,
}

impl MatchedPoint {
    pub fn best_xy8(&self) -> Option<&CyclePoint> {
        self.best.map(|i| &self.xy8[i])
    }

    /// `T_CCDD − T_XY8` over the combined one-sigma uncertainty.
    pub fn margin_sigmas(&self) -> Option<f64> {
        let b = self.best_xy8()?;
        let c = &self.ccdd.coherence;
        let s = (c.sigma * c.sigma + b.sigma() * b.sigma()).sqrt();
        Some((c.time - b.time()) / s)
    }
}

/// Equal-average-power comparison at `omega_bar`: XY8-N with the π-pulse
/// Rabi frequency set by the window, for each N in `cycles`, and CCDD with
/// Ω₁ = Ω̄ and the given Ω₂/Ω₁ ratio.
pub fn matched_power_point(
    system: &SpinSystem,
    noise: &NoiseModel,
    omega_bar: f64,
    cycles: &[u32],
    ratio: f64,
    guesses: (f64, f64),
    cfg: &StudyConfig,
) -> Result<MatchedPoint> {
    let mut xy8 = Vec::with_capacity(cycles.len());
    for &n in cycles {
        let family = SequenceFamily::MatchedPulsed {
            spec: xy8_spec(n, omega_bar),
            omega_bar,
        };
        let min_window = family.min_window();
        let m = measure(system, noise, &family, guesses.0.max(2.0 * min_window), cfg)?;
        xy8.push(CyclePoint {
            n_cycles: n,
            measurement: m,
            min_window,
        });
    }
    let best = xy8
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_reliable())
        .max_by(|a, b| a.1.time().total_cmp(&b.1.time()))
        .map(|(i, _)| i);
    let ccdd_family = SequenceFamily::Ccdd(CcddSpec::new(omega_bar, ratio, 0.0));
    let ccdd = measure(system, noise, &ccdd_family, guesses.1, cfg)?;
    Ok(MatchedPoint {
        omega_bar,
        xy8,
        best,
        ccdd,
    })
}

/// Headline numbers a noise model is calibrated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    pub t_se: f64,
    pub t_se_sigma: f64,
    pub alpha: f64,
    pub t2_xy8: f64,
    pub t2_xy8_sigma: f64,
    pub xy8_cycles: u32,
    pub t1: f64,
    pub t1_sigma: f64,
}

/// Hahn echo and XY8-N at π-pulse Rabi frequency `rabi`, and a T₁ curve.
pub fn calibration_metrics(
    system: &SpinSystem,
    noise: &NoiseModel,
    rabi: f64,
    xy8_cycles: u32,
    cfg: &StudyConfig,
) -> Result<CalibrationMetrics> {
    let pulse = PulseStrength::Rabi(rabi);
    let echo = SequenceFamily::Pulsed(PulsedSpec::new(PulsedScheme::HahnEcho, 1, pulse, PulseTiming::TotalTime(0.0)));
    let echo = measure(system, noise, &echo, 3e-6, cfg)?.coherence;
    let xy8 = SequenceFamily::Pulsed(xy8_spec(xy8_cycles, rabi));
    let xy8 = measure(system, noise, &xy8, 15e-6, cfg)?.coherence;
    let t1_guess = if system.t1.is_finite() { system.t1 } else { 1e-3 };
    let relax = SequenceFamily::Pulsed(PulsedSpec::new(PulsedScheme::Relaxation, 1, pulse, PulseTiming::TotalTime(0.0)));
    let t1 = measure(system, noise, &relax, t1_guess, cfg)?.coherence;
    Ok(CalibrationMetrics {
        t_se: echo.time,
        t_se_sigma: echo.sigma,
        alpha: echo.alpha.unwrap_or(f64::NAN),
        t2_xy8: xy8.time,
        t2_xy8_sigma: xy8.sigma,
        xy8_cycles,
        t1: t1.time,
        t1_sigma: t1.sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::mhz;

    #[test]
    fn ccdd_grid_is_stroboscopic_and_windowed() {
        let spec = CcddSpec::new(mhz(8.06), 0.1, 0.0);
        let g = ccdd_grid(&spec, 30e-6, 2.5, 6, 10);
        let p1 = 2.0 * PI / spec.omega1;
        for t in &g {
            let m = t / p1;
            assert!((m - m.round()).abs() < 1e-9);
        }
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(g.len() >= 5 * 10);
    }

    #[test]
    fn pulsed_grid_respects_minimum() {
        let g = pulsed_grid(10e-6, 3e-6, 2.5, 24);
        assert_eq!(g.len(), 24);
        assert!(g[0] > 3e-6);
        assert!((g[23] - 25e-6).abs() < 1e-15);
    }
}
