//! AC-magnetometry sensitivity: closed forms for pulsed and CCDD
//! detection under an average-power budget, and a simulation-based
//! estimate.
//!
//! The pulsed sequence detects ω_s when its pulse spacing is τ = kπ/ω_s.
//! At peak Rabi frequency Ω one π pulse (length π/Ω) occupies each slot,
//! so the duty cycle is ω_s/(kΩ) and the average power is
//! Ω̄² = Ω·ω_s/k. The pulses fit only when kΩ ≥ ω_s.
//!
//! CCDD runs at constant amplitude, so its Rabi frequency Ω₁ equals Ω̄.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::engine::{run_ac_sensing, ExperimentPlan};
use crate::error::{Error, Result};
use crate::units::GAMMA_E;

pub use crate::evolution::TargetField;

pub const DEFAULT_K_MAX: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    /// Largest allowed effective Rabi frequency Ω̄, rad/s; infinite when
    /// power is unconstrained.
    pub omega_bar: f64,
    /// Optional cap on the peak Rabi frequency, rad/s.
    pub omega_peak: Option<f64>,
}

impl PowerBudget {
    pub fn new(omega_bar: f64, omega_peak: Option<f64>) -> Result<Self> {
        let b = Self { omega_bar, omega_peak };
        b.validate()?;
        Ok(b)
    }

    pub fn unconstrained() -> Self {
        Self {
            omega_bar: f64::INFINITY,
            omega_peak: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_bar > 0.0) {
            return Err(Error::param("omega_bar", "must be > 0"));
        }
        if let Some(p) = self.omega_peak {
            if !(p >= self.omega_bar) {
                return Err(Error::param("omega_peak", "must be >= omega_bar"));
            }
        }
        Ok(())
    }

    pub fn is_unconstrained(&self) -> bool {
        self.omega_bar.is_infinite() && self.omega_peak.is_none()
    }

    /// Peak Rabi frequency available at harmonic `k`.
    pub fn pulsed_peak(&self, omega_s: f64, k: u32) -> f64 {
        let from_power = k as f64 * self.omega_bar * self.omega_bar / omega_s;
        match self.omega_peak {
            Some(p) => from_power.min(p),
            None => from_power,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingScheme {
    Pulsed,
    Ccdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcddBranch {
    /// Ω₁ = ω_s.
    DrivingResonance,
    /// ω₀ − ω_s = ±Ω₁.
    SidebandResonance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resonance {
    Harmonic { k: u32 },
    Ccdd(CcddBranch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub scheme: SensingScheme,
    /// Field sensitivity, T/√Hz; infinite when infeasible.
    pub eta: f64,
    /// γη, s^(−1/2).
    pub gamma_eta: f64,
    pub resonance: Option<Resonance>,
    /// Rabi frequency the scheme must run at, rad/s.
    pub rabi: Option<f64>,
    pub feasible: bool,
    pub reason: Option<String>,
}

fn check_time(name: &'static str, t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::param(name, "must be finite and > 0"));
    }
    Ok(())
}

pub fn sensitivity_pulsed(omega_s: f64, t2: f64, budget: &PowerBudget) -> Result<SensitivityReport> {
    sensitivity_pulsed_with(omega_s, t2, budget, DEFAULT_K_MAX)
}

/// `η = kπ/(4γ√T₂)` at the smallest feasible harmonic `k ≤ k_max`.
pub fn sensitivity_pulsed_with(omega_s: f64, t2: f64, budget: &PowerBudget, k_max: u32) -> Result<SensitivityReport> {
    check_time("t2", t2)?;
    budget.validate()?;
    if !(omega_s.is_finite() && omega_s > 0.0) {
        return Err(Error::param("omega_s", "must be finite and > 0"));
    }
    for k in 1..=k_max {
        let rabi = budget.pulsed_peak(omega_s, k);
        if k as f64 * rabi >= omega_s {
            let gamma_eta = k as f64 * std::f64::consts::PI / (4.0 * t2.sqrt());
            return Ok(SensitivityReport {
                scheme: SensingScheme::Pulsed,
                eta: gamma_eta / GAMMA_E,
                gamma_eta,
                resonance: Some(Resonance::Harmonic { k }),
                rabi: Some(rabi),
                feasible: true,
                reason: None,
            });
        }
    }
    Ok(SensitivityReport {
        scheme: SensingScheme::Pulsed,
        eta: f64::INFINITY,
        gamma_eta: f64::INFINITY,
        resonance: None,
        rabi: None,
        feasible: false,
        reason: Some(format!(
            "resonance needs k*Omega >= omega_s; no harmonic k <= {k_max} satisfies it within the power budget"
        )),
    })
}

/// `η = 1/(γ√T_c)` on the driving resonance, twice that on a sideband.
pub fn sensitivity_ccdd(omega_s: f64, tc: f64, branch: CcddBranch) -> Result<SensitivityReport> {
    check_time("tc", tc)?;
    if !(omega_s.is_finite() && omega_s > 0.0) {
        return Err(Error::param("omega_s", "must be finite and > 0"));
    }
    let factor = match branch {
        CcddBranch::DrivingResonance => 1.0,
        CcddBranch::SidebandResonance => 2.0,
    };
    let gamma_eta = factor / tc.sqrt();
    Ok(SensitivityReport {
        scheme: SensingScheme::Ccdd,
        eta: gamma_eta / GAMMA_E,
        gamma_eta,
        resonance: Some(Resonance::Ccdd(branch)),
        rabi: (branch == CcddBranch::DrivingResonance).then_some(omega_s),
        feasible: true,
        reason: None,
    })
}

/// CCDD branch available at `omega_s`: with a finite budget the drive sits
/// at Ω₁ = Ω̄ and only a signal at that frequency meets the driving
/// resonance; otherwise the transition is tuned onto a sideband.
pub fn ccdd_branch(omega_s: f64, budget: &PowerBudget) -> CcddBranch {
    if budget.omega_bar.is_infinite() || (omega_s - budget.omega_bar).abs() <= 1e-9 * budget.omega_bar {
        CcddBranch::DrivingResonance
    } else {
        CcddBranch::SidebandResonance
    }
}

fn ccdd_under_budget(omega_s: f64, tc: f64, budget: &PowerBudget) -> Result<SensitivityReport> {
    let mut r = sensitivity_ccdd(omega_s, tc, ccdd_branch(omega_s, budget))?;
    if budget.omega_bar.is_finite() {
        r.rabi = Some(budget.omega_bar);
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverRow {
    pub omega_s: f64,
    pub pulsed: SensitivityReport,
    pub ccdd: Option<SensitivityReport>,
}

impl CrossoverRow {
    pub fn ccdd_better(&self) -> bool {
        self.ccdd.as_ref().is_some_and(|c| c.eta < self.pulsed.eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverTable {
    pub rows: Vec<CrossoverRow>,
    /// Frequency above which CCDD is more sensitive everywhere on the grid,
    /// located by bisection between neighbouring grid points, rad/s.
    pub crossover: Option<f64>,
}

impl CrossoverTable {
    /// CSV with header `freq_mhz,eta_pulsed,eta_ccdd,k,feasible_pulsed`;
    /// η in T/√Hz. Missing CCDD values and harmonics are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "freq_mhz,eta_pulsed,eta_ccdd,k,feasible_pulsed")?;
        for r in &self.rows {
            let ccdd = r.ccdd.as_ref().map(|c| format!("{:e}", c.eta)).unwrap_or_default();
            let k = match r.pulsed.resonance {
                Some(Resonance::Harmonic { k }) => k.to_string(),
                _ => String::new(),
            };
            writeln!(
                w,
                "{},{:e},{},{},{}",
                crate::units::to_mhz(r.omega_s),
                r.pulsed.eta,
                ccdd,
                k,
                r.pulsed.feasible
            )?;
        }
        Ok(())
    }
}

/// Tabulates both schemes over `frequencies`. Without `tc` only the pulsed
/// column is filled.
pub fn sensitivity_crossover(
    frequencies: &[f64],
    t2: f64,
    tc: Option<f64>,
    budget: &PowerBudget,
) -> Result<CrossoverTable> {
    if frequencies.is_empty() {
        return Err(Error::param("frequencies", "grid is empty"));
    }
    let mut grid = frequencies.to_vec();
    grid.sort_by(f64::total_cmp);
    let row = |w: f64| -> Result<CrossoverRow> {
        Ok(CrossoverRow {
            omega_s: w,
            pulsed: sensitivity_pulsed(w, t2, budget)?,
            ccdd: tc.map(|tc| ccdd_under_budget(w, tc, budget)).transpose()?,
        })
    };
    let rows = grid.iter().map(|&w| row(w)).collect::<Result<Vec<_>>>()?;

    let mut crossover = None;
    if tc.is_some() && rows.len() > 1 {
        let first_better = rows.iter().rposition(|r| !r.ccdd_better()).map(|i| i + 1);
        if let Some(j) = first_better {
            if j < rows.len() {
                let (mut lo, mut hi) = (rows[j - 1].omega_s, rows[j].omega_s);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if row(mid)?.ccdd_better() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                crossover = Some(hi);
            }
        }
    }
    Ok(CrossoverTable { rows, crossover })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericSensitivity {
    /// T/√Hz.
    pub eta: f64,
    /// γη, s^(−1/2).
    pub gamma_eta: f64,
    /// ∂P₀/∂(γb), s.
    pub slope: f64,
    /// Single-shot projection noise `sqrt(P(1−P))` at the operating point.
    pub sigma_p: f64,
    pub p0: f64,
    pub interrogation_time: f64,
}

/// Simulation estimate `η = σ_P √T / |∂P/∂(γb)| / γ`, one readout per
/// interrogation time T. The slope is the symmetric difference between
/// runs at `±field.gamma_b` with common noise realisations.
pub fn sensitivity_numeric(plan: &ExperimentPlan, field: &TargetField, interrogation_time: f64) -> Result<NumericSensitivity> {
    check_time("interrogation_time", interrogation_time)?;
    field.validate()?;
    let mut plan = plan.clone();
    plan.times = vec![interrogation_time];
    plan.shots_per_point = None;
    let db = field.gamma_b;
    let zero = TargetField { gamma_b: 0.0, ..*field };
    let p0 = run_ac_sensing(&plan, &zero)?.p0_mean[0];
    let plus = run_ac_sensing(&plan, field)?.p0_mean[0];
    let minus_field = TargetField {
        theta: field.theta + std::f64::consts::PI,
        ..*field
    };
    let minus = run_ac_sensing(&plan, &minus_field)?.p0_mean[0];
    let dp = plus - minus;
    if db == 0.0 || dp.abs() < 1e-12 {
        return Err(Error::SlopeTooSmall(format!(
            "ΔP = {dp:e} over ±{db:e} rad/s"
        )));
    }
    let slope = dp / (2.0 * db);
    let sigma_p = (p0 * (1.0 - p0)).max(0.0).sqrt();
    let gamma_eta = sigma_p * interrogation_time.sqrt() / slope.abs();
    Ok(NumericSensitivity {
        eta: gamma_eta / GAMMA_E,
        gamma_eta,
        slope,
        sigma_p,
        p0,
        interrogation_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{mhz, us};

    #[test]
    fn pulsed_k1_value() {
        let r = sensitivity_pulsed(mhz(1.0), us(15.22), &PowerBudget::new(mhz(8.5), Some(mhz(8.5))).unwrap()).unwrap();
        assert_eq!(r.resonance, Some(Resonance::Harmonic { k: 1 }));
        let expect = std::f64::consts::PI / (4.0 * GAMMA_E * us(15.22).sqrt());
        assert!((r.eta - expect).abs() < 1e-15 * expect.max(1.0));
        assert!((r.eta * 1e9 - 1.143).abs() < 0.01);
    }

    #[test]
    fn pulsed_needs_higher_harmonic_above_rabi() {
        let budget = PowerBudget::new(mhz(8.5), Some(mhz(8.5))).unwrap();
        let k1 = sensitivity_pulsed(mhz(1.0), us(15.22), &budget).unwrap();
        let r = sensitivity_pulsed(mhz(3.0 * 8.5), us(15.22), &budget).unwrap();
        assert_eq!(r.resonance, Some(Resonance::Harmonic { k: 3 }));
        assert!((r.eta / k1.eta - 3.0).abs() < 1e-12);
        let off = sensitivity_pulsed(mhz(16.0 * 8.5), us(15.22), &budget).unwrap();
        assert!(!off.feasible);
        assert!(off.reason.is_some());
    }

    #[test]
    fn ccdd_branches() {
        let d = sensitivity_ccdd(mhz(8.06), us(31.22), CcddBranch::DrivingResonance).unwrap();
        let s = sensitivity_ccdd(mhz(8.06), us(31.22), CcddBranch::SidebandResonance).unwrap();
        assert!((s.eta / d.eta - 2.0).abs() < 1e-12);
        assert!((d.eta * 1e9 - 1.016).abs() < 0.01);
        let q = sensitivity_ccdd(mhz(8.06), 4.0 * us(31.22), CcddBranch::DrivingResonance).unwrap();
        assert!((q.eta / d.eta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_equal_times_favours_pulsed_by_four_over_pi() {
        let b = PowerBudget::unconstrained();
        let t = sensitivity_crossover(&[mhz(1.0), mhz(20.0)], us(20.0), Some(us(20.0)), &b).unwrap();
        for r in &t.rows {
            let ratio = r.ccdd.as_ref().unwrap().eta / r.pulsed.eta;
            assert!((ratio - 4.0 / std::f64::consts::PI).abs() < 1e-12);
        }
        assert!(t.crossover.is_none());
    }

    #[test]
    fn single_point_grid_has_no_crossover() {
        let b = PowerBudget::new(mhz(8.5), Some(mhz(8.5))).unwrap();
        let t = sensitivity_crossover(&[mhz(20.0)], us(15.22), Some(us(31.22)), &b).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.crossover.is_none());
        assert!(sensitivity_crossover(&[], us(15.22), None, &b).is_err());
    }

    #[test]
    fn budget_validation() {
        assert!(PowerBudget::new(mhz(8.5), Some(mhz(4.0))).is_err());
        assert!(PowerBudget::new(0.0, None).is_err());
    }
}
