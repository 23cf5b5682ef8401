//! Seeded classical noise: Ornstein–Uhlenbeck detuning and drive-amplitude
//! fluctuations plus per-trajectory static offsets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on samples in a single trajectory.
pub const MAX_TRAJECTORY_SAMPLES: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuProcessParams {
    /// Stationary standard deviation, rad/s.
    pub sigma: f64,
    /// Correlation time, s.
    pub tau_corr: f64,
}

impl OuProcessParams {
    pub fn new(sigma: f64, tau_corr: f64) -> Result<Self> {
        let p = Self { sigma, tau_corr };
        p.validate()?;
        Ok(p)
    }

    pub fn zero() -> Self {
        Self {
            sigma: 0.0,
            tau_corr: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::param("sigma", "must be finite and >= 0"));
        }
        if !(self.tau_corr > 0.0) {
            return Err(Error::param("tau_corr", "must be > 0"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma == 0.0
    }
}

/// Lorentzian spectral density `S(ω) = 2σ²τ / (1 + ω²τ²)` of an OU process;
/// `∫S(ω) dω/2π` over the real line equals σ².
pub fn psd(params: &OuProcessParams, omega: f64) -> f64 {
    let tau = params.tau_corr;
    2.0 * params.sigma * params.sigma * tau / (1.0 + omega * omega * tau * tau)
}

/// Exact discrete OU update started from the stationary distribution.
pub fn sample_ou<R: rand::Rng + ?Sized>(
    params: &OuProcessParams,
    dt: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be > 0"));
    }
    let mut out = vec![0.0; n];
    if params.is_zero() {
        return Ok(out);
    }
    add_ou(&mut out, params, dt, rng);
    Ok(out)
}

fn add_ou<R: rand::Rng + ?Sized>(buf: &mut [f64], params: &OuProcessParams, dt: f64, rng: &mut R) {
    let decay = (-dt / params.tau_corr).exp();
    let kick = params.sigma * (1.0 - decay * decay).sqrt();
    let z0: f64 = StandardNormal.sample(rng);
    let mut x = params.sigma * z0;
    for slot in buf.iter_mut() {
        *slot += x;
        let xi: f64 = StandardNormal.sample(rng);
        x = x * decay + kick * xi;
    }
}

/// Parameters of every classical noise source acting on the spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Detuning (σ_z) noise components, summed.
    pub detuning_ou: Vec<OuProcessParams>,
    /// Standard deviation of a per-trajectory static detuning, rad/s.
    pub static_detuning_sigma: f64,
    /// Drive-amplitude fluctuation δ_x, rad/s.
    pub amplitude_ou: OuProcessParams,
    /// Standard deviation of a per-trajectory fractional drive error.
    pub amplitude_static_frac: f64,
    /// Deterministic fractional drive miscalibration shared by all
    /// trajectories.
    #[serde(default)]
    pub amplitude_bias_frac: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::silent(0)
    }
}

impl NoiseModel {
    /// All sources off.
    pub fn silent(seed: u64) -> Self {
        Self {
            detuning_ou: Vec::new(),
            static_detuning_sigma: 0.0,
            amplitude_ou: OuProcessParams::zero(),
            amplitude_static_frac: 0.0,
            amplitude_bias_frac: 0.0,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.detuning_ou {
            p.validate()?;
        }
        self.amplitude_ou.validate()?;
        if !(self.static_detuning_sigma.is_finite() && self.static_detuning_sigma >= 0.0) {
            return Err(Error::param("static_detuning_sigma", "must be finite and >= 0"));
        }
        if !(self.amplitude_static_frac.is_finite() && self.amplitude_static_frac >= 0.0) {
            return Err(Error::param("amplitude_static_frac", "must be finite and >= 0"));
        }
        if !(self.amplitude_bias_frac.is_finite() && self.amplitude_bias_frac > -1.0) {
            return Err(Error::param("amplitude_bias_frac", "must be finite and > -1"));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.detuning_ou.iter().all(OuProcessParams::is_zero)
            && self.static_detuning_sigma == 0.0
            && self.amplitude_ou.is_zero()
            && self.amplitude_static_frac == 0.0
            && self.amplitude_bias_frac == 0.0
    }

    /// True when every trajectory sees the same noise.
    pub fn is_deterministic(&self) -> bool {
        self.detuning_ou.iter().all(OuProcessParams::is_zero)
            && self.static_detuning_sigma == 0.0
            && self.amplitude_ou.is_zero()
            && self.amplitude_static_frac == 0.0
    }

    /// Shortest nonzero correlation time across the OU components.
    pub fn shortest_correlation(&self) -> Option<f64> {
        self.detuning_ou
            .iter()
            .chain(std::iter::once(&self.amplitude_ou))
            .filter(|p| !p.is_zero())
            .map(|p| p.tau_corr)
            .reduce(f64::min)
    }

    /// Total detuning spectral density at `omega`.
    pub fn detuning_psd(&self, omega: f64) -> f64 {
        self.detuning_ou.iter().map(|p| psd(p, omega)).sum()
    }

    /// Independent generator for trajectory `index`.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Sampled noise realisation on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrajectory {
    pub dt: f64,
    /// Detuning δ_z, rad/s; enters the Hamiltonian as `(δ_z/2)σ_z`.
    pub delta_z: Vec<f64>,
    /// Additive drive-amplitude error δ_x, rad/s.
    pub delta_x: Vec<f64>,
    /// Fractional static drive error drawn for this trajectory; scaled by the
    /// waveform's nominal Rabi frequency when folded in.
    pub amplitude_frac: f64,
}

impl NoiseTrajectory {
    pub fn zero(duration: f64, dt: f64) -> Self {
        let n = ((duration / dt).ceil() as usize).max(1);
        Self {
            dt,
            delta_z: vec![0.0; n],
            delta_x: vec![0.0; n],
            amplitude_frac: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.delta_z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_z.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::param("dt", "must be > 0"));
        }
        if self.delta_z.len() != self.delta_x.len() {
            return Err(Error::param("delta_x", "length differs from delta_z"));
        }
        Ok(())
    }
}

/// Draws the noise realisation for `trajectory_index` over `duration`.
pub fn make_trajectory(
    model: &NoiseModel,
    duration: f64,
    dt: f64,
    trajectory_index: u64,
) -> Result<NoiseTrajectory> {
    model.validate()?;
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(Error::param("dt", "duration and dt must be > 0"));
    }
    let samples = (duration / dt).ceil();
    if !(samples <= MAX_TRAJECTORY_SAMPLES as f64) {
        return Err(Error::TrajectoryTooLong {
            samples: if samples.is_finite() { samples as u64 } else { u64::MAX },
            limit: MAX_TRAJECTORY_SAMPLES,
        });
    }
    let n = (samples as usize).max(1);
    let mut rng = model.rng(trajectory_index);
    let mut delta_z = vec![0.0; n];
    let mut delta_x = vec![0.0; n];

    // Fixed draw order keeps streams stable when a component is switched off.
    let static_z: f64 = StandardNormal.sample(&mut rng);
    let static_frac: f64 = StandardNormal.sample(&mut rng);
    let offset = model.static_detuning_sigma * static_z;
    if offset != 0.0 {
        delta_z.iter_mut().for_each(|v| *v = offset);
    }
    for comp in model.detuning_ou.iter().filter(|p| !p.is_zero()) {
        add_ou(&mut delta_z, comp, dt, &mut rng);
    }
    if !model.amplitude_ou.is_zero() {
        add_ou(&mut delta_x, &model.amplitude_ou, dt, &mut rng);
    }
    Ok(NoiseTrajectory {
        dt,
        delta_z,
        delta_x,
        amplitude_frac: model.amplitude_bias_frac + model.amplitude_static_frac * static_frac,
    })
}
