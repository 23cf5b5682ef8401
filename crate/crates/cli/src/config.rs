//! Run configuration files.
//!
//! A config is TOML with `[system]`, `[noise]`, `[sequence.<scheme>]`,
//! `[sweep]` and `[run]` tables. Every key that carries a unit says so in
//! its suffix. `resolve` fills in every default and expands the noise preset,
//! and the result is what gets echoed next to the outputs.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nvdecouple::analysis::ModelKind;
use nvdecouple::engine::{SequenceFamily, DEFAULT_CONTRAST, DEFAULT_TRAJECTORIES};
use nvdecouple::noise::NoiseModel;
use nvdecouple::preset::{self, NoiseSection, SystemSection};
use nvdecouple::sequences::{CcddSpec, PulseStrength, PulseTiming, PulsedScheme, PulsedSpec, DEFAULT_SAMPLES_PER_PERIOD};
use nvdecouple::spin::SpinSystem;
use nvdecouple::study::StudyConfig;
use nvdecouple::units::{mhz, us};
use nvdecouple::waveform::Readout;

const DEFAULT_SEED: u64 = 0;
const DEFAULT_GAMMA_B_KHZ: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub sequence: SequenceSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramsey: Option<PulsedSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hahn_echo: Option<PulsedSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpmg: Option<PulsedSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xy8: Option<PulsedSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaxation: Option<PulsedSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccdd: Option<CcddSection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsedSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cycles: Option<u32>,
    /// π-pulse Rabi frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_mhz: Option<f64>,
    /// Instantaneous pulses instead of `rabi_mhz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideal: Option<bool>,
    /// Scale the pulse Rabi frequency with the window so the effective Rabi
    /// frequency stays at this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_omega_bar_mhz: Option<f64>,
    /// Fixed window, used by `waveform`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep_phase_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_period: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcddSection {
    pub omega1_mhz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep_phase_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_period: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Explicit window lengths for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times_us: Option<Vec<f64>>,
    /// Uniform window grid, as an alternative to `times_us`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_stop_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// XY8 cycle numbers for `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cycles: Option<Vec<u32>>,
    /// Effective Rabi frequencies for the XY8/CCDD comparison in `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_bar_mhz: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cycles: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccdd_ratio: Option<f64>,
    /// Signal frequencies for the simulated sensitivity sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_mhz: Option<Vec<f64>>,
    /// γb/2π of the probe field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_b_khz: Option<f64>,
    /// Target interrogation time; rounded to the nearest resonant length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interrogation_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trajectories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_trajectories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<Readout>,
    /// Overrides the scheme's default decay model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_model: Option<ModelKind>,
    /// Expected decay time for the adaptive grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_guess_us: Option<f64>,
    /// Output file prefix; defaults to the config file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_stem: Option<String>,
}

pub enum Scheme<'a> {
    Pulsed(PulsedScheme, &'a PulsedSection),
    Ccdd(&'a CcddSection),
}

impl SequenceSection {
    pub fn scheme(&self) -> Result<Scheme<'_>> {
        let mut found = Vec::new();
        let pulsed = [
            ("ramsey", PulsedScheme::Ramsey, &self.ramsey),
            ("hahn_echo", PulsedScheme::HahnEcho, &self.hahn_echo),
            ("cpmg", PulsedScheme::Cpmg, &self.cpmg),
            ("xy8", PulsedScheme::Xy8, &self.xy8),
            ("relaxation", PulsedScheme::Relaxation, &self.relaxation),
        ];
        let mut scheme = None;
        for (name, kind, sec) in &pulsed {
            if let Some(s) = sec {
                found.push(*name);
                scheme = Some(Scheme::Pulsed(*kind, s));
            }
        }
        if let Some(c) = &self.ccdd {
            found.push("ccdd");
            scheme = Some(Scheme::Ccdd(c));
        }
        match (found.len(), scheme) {
            (1, Some(s)) => Ok(s),
            (0, _) => bail!("sequence: no scheme table; add one of [sequence.xy8], [sequence.cpmg], [sequence.hahn_echo], [sequence.ramsey], [sequence.relaxation], [sequence.ccdd]"),
            _ => bail!("sequence: exactly one scheme table is allowed, found {}", found.join(", ")),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        bail!("{name}: must be finite and > 0, got {v}");
    }
    Ok(v)
}

impl PulsedSection {
    fn strength(&self) -> Result<PulseStrength> {
        match (self.ideal.unwrap_or(false), self.rabi_mhz) {
            (true, None) => Ok(PulseStrength::Ideal),
            (true, Some(_)) => bail!("sequence: `ideal = true` and `rabi_mhz` are mutually exclusive"),
            (false, Some(r)) => Ok(PulseStrength::Rabi(mhz(positive("sequence.rabi_mhz", r)?))),
            (false, None) => {
                if self.matched_omega_bar_mhz.is_some() {
                    // Replaced per window; any placeholder will do.
                    Ok(PulseStrength::Ideal)
                } else {
                    bail!("sequence: set `rabi_mhz` or `ideal = true`")
                }
            }
        }
    }

    fn spec(&self, scheme: PulsedScheme) -> Result<PulsedSpec> {
        let n = self.n_cycles.unwrap_or(1);
        if n == 0 {
            bail!("sequence.n_cycles: must be >= 1");
        }
        let timing = match (self.tau_us, self.window_us) {
            (Some(_), Some(_)) => bail!("sequence: `tau_us` and `window_us` are mutually exclusive"),
            (Some(t), None) => PulseTiming::Tau(us(t)),
            (None, Some(t)) => PulseTiming::TotalTime(us(t)),
            (None, None) => PulseTiming::TotalTime(0.0),
        };
        let mut spec = PulsedSpec::new(scheme, n, self.strength()?, timing);
        spec.prep_phase = self.prep_phase_deg.unwrap_or(0.0).to_radians();
        spec.samples_per_period = self.samples_per_period.unwrap_or(DEFAULT_SAMPLES_PER_PERIOD);
        Ok(spec)
    }
}

impl CcddSection {
    pub fn spec(&self) -> Result<CcddSpec> {
        let mut spec = CcddSpec::new(
            mhz(positive("sequence.ccdd.omega1_mhz", self.omega1_mhz)?),
            self.ratio.unwrap_or(0.1),
            self.duration_us.map_or(0.0, us),
        );
        spec.prep_phase = self.prep_phase_deg.unwrap_or(0.0).to_radians();
        spec.samples_per_period = self.samples_per_period.unwrap_or(DEFAULT_SAMPLES_PER_PERIOD);
        spec.validate()?;
        Ok(spec)
    }
}

/// Everything a command needs, with units converted.
pub struct Resolved {
    pub config: RunConfig,
    pub system: SpinSystem,
    pub noise: NoiseModel,
    pub family: SequenceFamily,
    /// Fixed window from the sequence table, if any.
    pub window: Option<f64>,
    pub study: StudyConfig,
    pub stem: String,
}

impl Resolved {
    pub fn explicit_times(&self) -> Result<Option<Vec<f64>>> {
        let s = &self.config.sweep;
        match (&s.times_us, s.t_start_us, s.t_stop_us, s.points) {
            (Some(t), None, None, None) => {
                if t.is_empty() {
                    bail!("sweep.times_us: empty grid");
                }
                Ok(Some(t.iter().map(|v| us(*v)).collect()))
            }
            (None, Some(a), Some(b), Some(n)) => {
                if n < 2 || !(b > a) || a < 0.0 {
                    bail!("sweep: need t_stop_us > t_start_us >= 0 and points >= 2");
                }
                Ok(Some((0..n).map(|k| us(a + (b - a) * k as f64 / (n - 1) as f64)).collect()))
            }
            (None, None, None, None) => Ok(None),
            _ => bail!("sweep: give either times_us or all of t_start_us, t_stop_us, points"),
        }
    }

    pub fn t_guess(&self) -> f64 {
        us(self.config.run.t_guess_us.unwrap_or(10.0))
    }

    pub fn gamma_b(&self) -> f64 {
        2.0 * PI * 1e3 * self.config.sweep.gamma_b_khz.unwrap_or(DEFAULT_GAMMA_B_KHZ)
    }
}

pub fn load(path: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<Resolved> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let stem = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    resolve(config, seed, workers, stem)
}

/// Expands the preset and fills every default, so the echoed config is
/// complete and re-running from it is identical.
pub fn resolve(mut config: RunConfig, seed: Option<u64>, workers: Option<usize>, stem: String) -> Result<Resolved> {
    let (system_sec, mut noise_sec) = preset::resolve(&config.system, &config.noise)?;
    if seed.is_some() {
        noise_sec.seed = seed;
    }
    let system = system_sec.to_system().context("system")?;
    let noise = noise_sec.to_model(DEFAULT_SEED).context("noise")?;
    noise_sec.seed = Some(noise.seed);
    config.system = system_sec;
    config.noise = noise_sec;

    let run = &mut config.run;
    run.n_trajectories.get_or_insert(DEFAULT_TRAJECTORIES);
    let defaults = StudyConfig::default();
    run.pilot_trajectories.get_or_insert(defaults.pilot_trajectories);
    run.contrast.get_or_insert(DEFAULT_CONTRAST);
    run.readout.get_or_insert(Readout::Bright);
    let stem = run.output_stem.get_or_insert(stem).clone();
    if stem.is_empty() || stem.contains(['/', '\\']) {
        bail!("run.output_stem: must be a plain file name prefix");
    }
    let study = StudyConfig {
        n_trajectories: run.n_trajectories.unwrap_or(DEFAULT_TRAJECTORIES),
        pilot_trajectories: run.pilot_trajectories.unwrap_or(defaults.pilot_trajectories),
        workers,
        ..defaults
    };
    study.validate()?;

    let (family, window) = match config.sequence.scheme()? {
        Scheme::Pulsed(kind, sec) => {
            let spec = sec.spec(kind)?;
            let window = match spec.timing {
                PulseTiming::TotalTime(t) if t > 0.0 => Some(t),
                PulseTiming::TotalTime(_) => None,
                PulseTiming::Tau(_) => Some(spec.window()),
            };
            let family = match sec.matched_omega_bar_mhz {
                Some(w) => {
                    if sec.rabi_mhz.is_some() || sec.ideal.is_some() {
                        bail!("sequence: `matched_omega_bar_mhz` sets the pulse strength; drop `rabi_mhz`/`ideal`");
                    }
                    SequenceFamily::MatchedPulsed {
                        spec,
                        omega_bar: mhz(positive("sequence.matched_omega_bar_mhz", w)?),
                    }
                }
                None => SequenceFamily::Pulsed(spec),
            };
            (family, window)
        }
        Scheme::Ccdd(sec) => {
            let spec = sec.spec()?;
            (SequenceFamily::Ccdd(spec), (spec.duration > 0.0).then_some(spec.duration))
        }
    };
    Ok(Resolved {
        config,
        system,
        noise,
        family,
        window,
        study,
        stem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Resolved> {
        let c: RunConfig = toml::from_str(text)?;
        resolve(c, None, None, "t".into())
    }

    const BASE: &str = "[system]\nomega0_mhz = 2870.0\n[noise]\nstatic_detuning_mhz = 0.1\n";

    #[test]
    fn two_schemes_rejected() {
        let text = format!("{BASE}[sequence.xy8]\nrabi_mhz = 8.5\n[sequence.ccdd]\nomega1_mhz = 8.06\n");
        let err = parse(&text).err().unwrap().to_string();
        assert!(err.contains("exactly one"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{BASE}[sequence.xy8]\nrabi = 8.5\n");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = "[noise]\npreset = \"nanodiamond\"\nseed = 5\n[sequence.xy8]\nn_cycles = 4\nrabi_mhz = 8.5\n";
        let r = parse(text).unwrap();
        let echoed = toml::to_string(&r.config).unwrap();
        let again = parse(&echoed).unwrap();
        assert_eq!(again.config, r.config);
        assert_eq!(again.noise, r.noise);
        assert_eq!(again.system, r.system);
        assert_eq!(again.noise.seed, 5);
    }

    #[test]
    fn field_in_gauss() {
        let text = "[system]\nfield_gauss = 25.0\n[sequence.ccdd]\nomega1_mhz = 4.6\n";
        let r = parse(text).unwrap();
        let f = r.system.omega0 / (2.0 * PI * 1e6);
        assert!((f - (2870.0 - 2.8030 * 25.0)).abs() < 1e-3);
    }
}
