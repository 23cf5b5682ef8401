//! Monte-Carlo experiment runner.
//!
//! Every time point draws its own noise realisations: trajectory `i` of
//! point `p` uses the generator stream `p·n + i` of the master seed.
//! Per-trajectory results are collected in order and reduced with a fixed
//! pairwise tree, so results do not depend on the worker count.

use std::io::{self, BufRead, Write};

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{Program, TargetField};
use crate::noise::{make_trajectory, NoiseModel, NoiseTrajectory};
use crate::sequences::{compile_ccdd, compile_pulsed, CcddSpec, PulseStrength, PulseTiming, PulsedScheme, PulsedSpec};
use crate::spin::{Bloch, SpinSystem};
use crate::waveform::{ControlWaveform, Readout};

pub const DEFAULT_TRAJECTORIES: usize = 2000;
pub const DEFAULT_CONTRAST: f64 = 0.3;

/// Stream offset for shot sampling, disjoint from trajectory streams.
const SHOT_STREAM: u64 = 1 << 63;

/// Sequence template; the swept time sets the decoupling-window length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceFamily {
    Pulsed(PulsedSpec),
    /// Pulsed sequence whose π-pulse Rabi frequency follows the window so
    /// that the effective Rabi frequency stays at `omega_bar`:
    /// `Ω = Ω̄²T/(nπ)` for `n` pulses. Feasible for `T ≥ nπ/Ω̄`.
    MatchedPulsed { spec: PulsedSpec, omega_bar: f64 },
    Ccdd(CcddSpec),
}

impl SequenceFamily {
    /// Shortest window the family can realise.
    pub fn min_window(&self) -> f64 {
        match *self {
            SequenceFamily::MatchedPulsed { spec, omega_bar } => {
                spec.pulse_count() as f64 * std::f64::consts::PI / omega_bar
            }
            SequenceFamily::Pulsed(spec) => match spec.pulse {
                PulseStrength::Rabi(rabi) if spec.scheme != PulsedScheme::Relaxation => {
                    spec.pulse_count() as f64 * std::f64::consts::PI / rabi
                }
                _ => 0.0,
            },
            SequenceFamily::Ccdd(_) => 0.0,
        }
    }

    pub fn compile_at(&self, window: f64) -> Result<ControlWaveform> {
        match *self {
            SequenceFamily::Pulsed(mut spec) => {
                spec.timing = PulseTiming::TotalTime(window);
                compile_pulsed(&spec)
            }
            SequenceFamily::MatchedPulsed { mut spec, omega_bar } => {
                let n = spec.pulse_count();
                if n == 0 || !(omega_bar.is_finite() && omega_bar > 0.0) {
                    return Err(Error::param("omega_bar", "needs a finite target and at least one pulse"));
                }
                if window <= 0.0 {
                    return Err(Error::InfeasibleTiming("empty window".into()));
                }
                spec.pulse = PulseStrength::Rabi(omega_bar * omega_bar * window / (n as f64 * std::f64::consts::PI));
                spec.timing = PulseTiming::TotalTime(window);
                compile_pulsed(&spec)
            }
            SequenceFamily::Ccdd(mut spec) => {
                spec.duration = window;
                compile_ccdd(&spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub system: SpinSystem,
    pub noise: NoiseModel,
    pub family: SequenceFamily,
    /// Decoupling-window lengths, s, strictly increasing.
    pub times: Vec<f64>,
    pub n_trajectories: usize,
    /// Binomial readout emulation with this many shots per point.
    pub shots_per_point: Option<u64>,
    /// Readout contrast for the shot model.
    pub contrast: f64,
    pub readout: Readout,
    /// Worker threads; `None` uses the global pool. Never affects results.
    pub workers: Option<usize>,
}

impl ExperimentPlan {
    pub fn new(system: SpinSystem, noise: NoiseModel, family: SequenceFamily, times: Vec<f64>) -> Self {
        Self {
            system,
            noise,
            family,
            times,
            n_trajectories: DEFAULT_TRAJECTORIES,
            shots_per_point: None,
            contrast: DEFAULT_CONTRAST,
            readout: Readout::Bright,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.noise.validate()?;
        if self.times.is_empty() {
            return Err(Error::param("times", "no time points"));
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::param("times", "must be finite and >= 0"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("times", "must be strictly increasing"));
        }
        if self.n_trajectories == 0 {
            return Err(Error::param("n_trajectories", "must be >= 1"));
        }
        if self.shots_per_point == Some(0) {
            return Err(Error::param("shots_per_point", "must be >= 1"));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::param("contrast", "must lie in (0, 1]"));
        }
        if self.workers == Some(0) {
            return Err(Error::param("workers", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub p0_mean: Vec<f64>,
    pub p0_sem: Vec<f64>,
}

impl DecayCurve {
    pub fn new(times: Vec<f64>, p0_mean: Vec<f64>, p0_sem: Vec<f64>) -> Result<Self> {
        let c = Self { times, p0_mean, p0_sem };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.p0_mean.len() || self.times.len() != self.p0_sem.len() {
            return Err(Error::param("curve", "arrays are not aligned"));
        }
        if self.p0_mean.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param("p0_mean", "must lie in [0, 1]"));
        }
        if self.p0_sem.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::param("p0_sem", "must be finite and >= 0"));
        }
        if self.times.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("times", "must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `time_us,p0_mean,p0_sem`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_us,p0_mean,p0_sem")?;
        for ((t, p), s) in self.times.iter().zip(&self.p0_mean).zip(&self.p0_sem) {
            writeln!(w, "{},{},{}", t * 1e6, p, s)?;
        }
        Ok(())
    }

    /// Reads the format written by [`DecayCurve::write_csv`]. A missing
    /// `p0_sem` column is read as zeros.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let bad = |msg: String| Error::param("csv", msg);
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let find = |name: &str| cols.iter().position(|c| c == name);
        let it = find("time_us").ok_or_else(|| bad("missing column time_us".into()))?;
        let ip = find("p0_mean").ok_or_else(|| bad("missing column p0_mean".into()))?;
        let is = find("p0_sem");
        let (mut times, mut mean, mut sem) = (Vec::new(), Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |i: usize| -> Result<f64> {
                fields
                    .get(i)
                    .ok_or_else(|| bad(format!("line {}: too few fields", k + 2)))?
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", k + 2)))
            };
            times.push(get(it)? * 1e-6);
            mean.push(get(ip)?);
            sem.push(match is {
                Some(i) => get(i)?,
                None => 0.0,
            });
        }
        Self::new(times, mean, sem)
    }
}

/// Sum with a fixed balanced binary tree over the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Noise sampling step: a tenth of the shortest correlation time, aligned
/// to the waveform grid when finer; one sample when nothing fluctuates.
pub fn noise_dt(model: &NoiseModel, wf: &ControlWaveform) -> f64 {
    let duration = wf.duration();
    match model.shortest_correlation() {
        None => duration.max(wf.dt),
        Some(tau) => {
            let dt = tau / 10.0;
            if dt >= duration {
                duration
            } else if wf.dt < dt {
                (dt / wf.dt).floor() * wf.dt
            } else {
                dt
            }
        }
    }
}

fn trajectory(model: &NoiseModel, wf: &ControlWaveform, ndt: f64, index: u64) -> Result<NoiseTrajectory> {
    if model.is_deterministic() {
        let mut t = NoiseTrajectory::zero(wf.duration(), wf.duration());
        t.amplitude_frac = model.amplitude_bias_frac;
        return Ok(t);
    }
    make_trajectory(model, wf.duration(), ndt, index)
}

/// Final |0⟩ population of one trajectory.
pub fn run_trajectory(
    program: &Program,
    model: &NoiseModel,
    wf: &ControlWaveform,
    index: u64,
) -> Result<f64> {
    let noise = trajectory(model, wf, noise_dt(model, wf), index)?;
    Ok(program.evolve(Bloch([0.0, 0.0, 1.0]), &noise)?.p0())
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::param("workers", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn simulate(plan: &ExperimentPlan, field: Option<TargetField>) -> Result<DecayCurve> {
    plan.validate()?;
    // Identical trajectories need evaluating only once.
    let n = if plan.noise.is_deterministic() { 1 } else { plan.n_trajectories };
    let mut prepared = Vec::with_capacity(plan.times.len());
    for &t in &plan.times {
        let wf = plan.family.compile_at(t)?.with_readout(plan.readout);
        let program = Program::new(&wf, &plan.system, field)?;
        prepared.push((wf, program));
    }
    let total = plan.times.len() * n;
    let values: Vec<Result<f64>> = with_pool(plan.workers, || {
        (0..total)
            .into_par_iter()
            .map(|g| {
                let point = g / n;
                let (wf, program) = &prepared[point];
                run_trajectory(program, &plan.noise, wf, g as u64).map_err(|e| Error::Trajectory {
                    point,
                    index: g as u64,
                    source: Box::new(e),
                })
            })
            .collect()
    })?;
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;

    let mut mean = Vec::with_capacity(plan.times.len());
    let mut sem = Vec::with_capacity(plan.times.len());
    for (point, chunk) in values.chunks(n).enumerate() {
        let (m, s) = mean_sem(chunk);
        let m = m.clamp(0.0, 1.0);
        match plan.shots_per_point {
            None => {
                mean.push(m);
                sem.push(s);
            }
            Some(shots) => {
                let (p, e) = sample_shots(&plan.noise, point as u64, m, shots, plan.contrast)?;
                mean.push(p);
                sem.push(e);
            }
        }
    }
    DecayCurve::new(plan.times.clone(), mean, sem)
}

/// Binomial readout: each shot is bright with `q = ½ + c(p₀ − ½)`; the
/// estimate inverts that map.
fn sample_shots(model: &NoiseModel, point: u64, p0: f64, shots: u64, contrast: f64) -> Result<(f64, f64)> {
    let q = 0.5 + contrast * (p0 - 0.5);
    let mut rng = model.rng(SHOT_STREAM | point);
    let dist = Binomial::new(shots, q).map_err(|e| Error::param("shots_per_point", e.to_string()))?;
    let k = dist.sample(&mut rng) as f64;
    let n = shots as f64;
    let p = ((k / n - 0.5) / contrast + 0.5).clamp(0.0, 1.0);
    Ok((p, (q * (1.0 - q) / n).sqrt() / contrast))
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<DecayCurve> {
    simulate(plan, None)
}

/// As [`run_experiment`] with an oscillating target field on σ_z.
pub fn run_ac_sensing(plan: &ExperimentPlan, field: &TargetField) -> Result<DecayCurve> {
    simulate(plan, Some(*field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::OuProcessParams;
    use crate::units::{mhz, us};

    fn sys() -> SpinSystem {
        SpinSystem::rotating(mhz(2870.0), f64::INFINITY).unwrap()
    }

    #[test]
    fn noiseless_echo_stays_bright() {
        let spec = PulsedSpec::new(PulsedScheme::HahnEcho, 1, PulseStrength::Rabi(mhz(8.5)), PulseTiming::TotalTime(0.0));
        let mut plan = ExperimentPlan::new(sys(), NoiseModel::silent(1), SequenceFamily::Pulsed(spec), vec![us(1.0), us(2.0), us(5.0)]);
        plan.n_trajectories = 3;
        let c = run_experiment(&plan).unwrap();
        assert!(c.p0_mean.iter().all(|p| (p - 1.0).abs() < 1e-10));
        assert!(c.p0_sem.iter().all(|s| *s < 1e-10));
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let xs: Vec<f64> = (0..1000).map(|k| (k as f64 * 0.37).sin()).collect();
        assert_eq!(pairwise_sum(&xs).to_bits(), pairwise_sum(&xs.clone()).to_bits());
        assert!((pairwise_sum(&xs) - xs.iter().sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let noise = NoiseModel {
            detuning_ou: vec![OuProcessParams::new(2e6, 1e-6).unwrap()],
            ..NoiseModel::silent(9)
        };
        let spec = PulsedSpec::new(PulsedScheme::Xy8, 1, PulseStrength::Rabi(mhz(8.5)), PulseTiming::TotalTime(0.0));
        let mut plan = ExperimentPlan::new(sys(), noise, SequenceFamily::Pulsed(spec), vec![us(1.0), us(3.0)]);
        plan.n_trajectories = 40;
        plan.workers = Some(1);
        let a = run_experiment(&plan).unwrap();
        plan.workers = Some(3);
        let b = run_experiment(&plan).unwrap();
        for (x, y) in a.p0_mean.iter().zip(&b.p0_mean) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn shot_model_stays_in_range() {
        let spec = PulsedSpec::new(PulsedScheme::HahnEcho, 1, PulseStrength::Ideal, PulseTiming::TotalTime(0.0));
        let mut plan = ExperimentPlan::new(sys(), NoiseModel::silent(2), SequenceFamily::Pulsed(spec), vec![us(1.0)]);
        plan.n_trajectories = 1;
        plan.shots_per_point = Some(100_000);
        let c = run_experiment(&plan).unwrap();
        assert!(c.p0_mean[0] <= 1.0 && c.p0_mean[0] > 0.95);
        let expect = (0.65f64 * 0.35 / 1e5).sqrt() / 0.3;
        assert!((c.p0_sem[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let c = DecayCurve::new(vec![1e-6, 2.5e-6], vec![0.9, 0.7], vec![0.01, 0.02]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = DecayCurve::read_csv(&buf[..]).unwrap();
        assert_eq!(back.p0_mean, c.p0_mean);
        for (a, b) in back.times.iter().zip(&c.times) {
            assert!((a - b).abs() < 1e-18);
        }
    }

    #[test]
    fn plan_validation() {
        let spec = PulsedSpec::new(PulsedScheme::HahnEcho, 1, PulseStrength::Ideal, PulseTiming::TotalTime(0.0));
        let mut plan = ExperimentPlan::new(sys(), NoiseModel::silent(2), SequenceFamily::Pulsed(spec), vec![us(2.0), us(1.0)]);
        assert!(run_experiment(&plan).is_err());
        plan.times = vec![us(1.0)];
        plan.n_trajectories = 0;
        assert!(run_experiment(&plan).is_err());
    }
}
