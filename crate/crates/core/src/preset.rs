//! `[system]` and `[noise]` configuration sections and the named noise
//! presets built from them.
//!
//! Keys carry their unit: `_mhz` values are cyclic frequencies (converted
//! with `2π·f`), `_us` values are microseconds, `_gauss` is an axial field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseModel, OuProcessParams};
use crate::spin::{Frame, RelaxationChannel, SpinSystem};
use crate::units::{mhz, omega0_from_gauss, to_mhz, to_us, us};

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 2] = ["nanodiamond", "in-cell"];

const NANODIAMOND: &str = include_str!("../presets/nanodiamond.cfg");
const IN_CELL: &str = include_str!("../presets/in-cell.cfg");

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_gauss: Option<f64>,
    /// Absent means no longitudinal relaxation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<Frame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaxation: Option<RelaxationChannel>,
}

impl SystemSection {
    /// Keys set here win over `base`.
    pub fn overlay(&self, base: &SystemSection) -> SystemSection {
        let (omega0_mhz, field_gauss) = if self.omega0_mhz.is_some() || self.field_gauss.is_some() {
            (self.omega0_mhz, self.field_gauss)
        } else {
            (base.omega0_mhz, base.field_gauss)
        };
        SystemSection {
            omega0_mhz,
            field_gauss,
            t1_us: self.t1_us.or(base.t1_us),
            frame: self.frame.or(base.frame),
            relaxation: self.relaxation.or(base.relaxation),
        }
    }

    pub fn to_system(&self) -> Result<SpinSystem> {
        let omega0 = match (self.omega0_mhz, self.field_gauss) {
            (Some(f), None) => mhz(f),
            (None, Some(b)) => omega0_from_gauss(b)
                .ok_or_else(|| Error::param("field_gauss", "transition frequency would not be positive"))?,
            (Some(_), Some(_)) => return Err(Error::param("system", "give either omega0_mhz or field_gauss, not both")),
            (None, None) => return Err(Error::param("system", "omega0_mhz or field_gauss is required")),
        };
        let t1 = self.t1_us.map_or(f64::INFINITY, us);
        let sys = SpinSystem::new(omega0, t1, self.frame.unwrap_or(Frame::Rotating))?;
        Ok(sys.with_channel(self.relaxation.unwrap_or_default()))
    }
}

/// One Ornstein–Uhlenbeck component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSection {
    /// Standard deviation as a cyclic frequency, MHz.
    pub sigma_mhz: f64,
    pub tau_us: f64,
}

impl OuSection {
    fn to_params(self) -> Result<OuProcessParams> {
        OuProcessParams::new(mhz(self.sigma_mhz), us(self.tau_us))
    }

    fn from_params(p: &OuProcessParams) -> Self {
        Self {
            sigma_mhz: to_mhz(p.sigma),
            tau_us: to_us(p.tau_corr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Named preset supplying every noise parameter (and system defaults).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detuning_ou: Vec<OuSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_detuning_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_ou: Option<OuSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_static_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_bias_frac: Option<f64>,
}

impl NoiseSection {
    fn has_explicit_params(&self) -> bool {
        !self.detuning_ou.is_empty()
            || self.static_detuning_mhz.is_some()
            || self.amplitude_ou.is_some()
            || self.amplitude_static_frac.is_some()
            || self.amplitude_bias_frac.is_some()
    }

    /// Builds the model from explicit parameters; a `preset` key is an error
    /// here, resolve it first with [`resolve`].
    pub fn to_model(&self, default_seed: u64) -> Result<NoiseModel> {
        if self.preset.is_some() {
            return Err(Error::Preset("preset must be resolved before building the noise model".into()));
        }
        let model = NoiseModel {
            detuning_ou: self.detuning_ou.iter().map(|c| c.to_params()).collect::<Result<_>>()?,
            static_detuning_sigma: mhz(self.static_detuning_mhz.unwrap_or(0.0)),
            amplitude_ou: match self.amplitude_ou {
                Some(c) => c.to_params()?,
                None => OuProcessParams::zero(),
            },
            amplitude_static_frac: self.amplitude_static_frac.unwrap_or(0.0),
            amplitude_bias_frac: self.amplitude_bias_frac.unwrap_or(0.0),
            seed: self.seed.unwrap_or(default_seed),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn from_model(model: &NoiseModel) -> Self {
        let amp = (!model.amplitude_ou.is_zero()).then(|| OuSection::from_params(&model.amplitude_ou));
        Self {
            preset: None,
            seed: Some(model.seed),
            detuning_ou: model.detuning_ou.iter().map(OuSection::from_params).collect(),
            static_detuning_mhz: Some(to_mhz(model.static_detuning_sigma)),
            amplitude_ou: amp,
            amplitude_static_frac: Some(model.amplitude_static_frac),
            amplitude_bias_frac: Some(model.amplitude_bias_frac),
        }
    }
}

/// A preset file: a `[system]` and a `[noise]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub system: SystemSection,
    pub noise: NoiseSection,
}

impl Preset {
    pub fn parse(text: &str) -> Result<Self> {
        let p: Preset = toml::from_str(text).map_err(|e| Error::Preset(e.to_string()))?;
        if p.noise.preset.is_some() {
            return Err(Error::Preset("a preset cannot refer to another preset".into()));
        }
        p.system.to_system()?;
        p.noise.to_model(0)?;
        Ok(p)
    }
}

pub fn preset(name: &str) -> Result<Preset> {
    let text = match name {
        "nanodiamond" => NANODIAMOND,
        "in-cell" => IN_CELL,
        _ => {
            return Err(Error::Preset(format!(
                "unknown preset `{name}`; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Preset::parse(text)
}

/// Expands a `preset` reference. Explicit noise parameters next to a preset
/// are rejected; `seed` and system keys override the preset's.
pub fn resolve(system: &SystemSection, noise: &NoiseSection) -> Result<(SystemSection, NoiseSection)> {
    match &noise.preset {
        None => Ok((system.clone(), noise.clone())),
        Some(name) => {
            if noise.has_explicit_params() {
                return Err(Error::Preset(format!(
                    "noise section names preset `{name}` and also sets explicit parameters"
                )));
            }
            let p = preset(name)?;
            let mut n = p.noise;
            if noise.seed.is_some() {
                n.seed = noise.seed;
            }
            Ok((system.overlay(&p.system), n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_presets_parse() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            let sys = p.system.to_system().unwrap();
            assert!(sys.t1.is_finite());
            assert!(!p.noise.to_model(1).unwrap().is_silent());
        }
        assert!(matches!(preset("bulk"), Err(Error::Preset(_))));
    }

    #[test]
    fn preset_and_explicit_params_conflict() {
        let noise = NoiseSection {
            preset: Some("nanodiamond".into()),
            static_detuning_mhz: Some(0.1),
            ..Default::default()
        };
        assert!(resolve(&SystemSection::default(), &noise).is_err());
    }

    #[test]
    fn resolution_applies_overrides() {
        let noise = NoiseSection {
            preset: Some("nanodiamond".into()),
            seed: Some(42),
            ..Default::default()
        };
        let system = SystemSection {
            t1_us: Some(50.0),
            ..Default::default()
        };
        let (s, n) = resolve(&system, &noise).unwrap();
        assert_eq!(s.t1_us, Some(50.0));
        assert!(s.omega0_mhz.is_some() || s.field_gauss.is_some());
        assert_eq!(n.seed, Some(42));
        assert!(n.preset.is_none());
    }

    #[test]
    fn model_round_trips_through_section() {
        let m = preset("nanodiamond").unwrap().noise.to_model(3).unwrap();
        let back = NoiseSection::from_model(&m).to_model(0).unwrap();
        assert_eq!(back.detuning_ou.len(), m.detuning_ou.len());
        for (a, b) in back.detuning_ou.iter().zip(&m.detuning_ou) {
            assert!((a.sigma / b.sigma - 1.0).abs() < 1e-12);
            assert!((a.tau_corr / b.tau_corr - 1.0).abs() < 1e-12);
        }
        assert_eq!(back.seed, m.seed);
    }
}
