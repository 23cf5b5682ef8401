//! Python bindings: decay simulation for the shipped presets, curve fitting
//! and the closed-form sensitivity crossover.
//!
//! Units at this boundary are µs and MHz, as in the command-line tool.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use nvdecouple::analysis::{fit_data, FitModel, ModelKind};
use nvdecouple::engine::{run_experiment, ExperimentPlan, SequenceFamily};
use nvdecouple::preset::preset;
use nvdecouple::sensing::{sensitivity_crossover, PowerBudget};
use nvdecouple::sequences::CcddSpec;
use nvdecouple::study::xy8_spec;
use nvdecouple::units::{mhz, to_mhz, to_us, us};

fn py_err(e: nvdecouple::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Curve = (Vec<f64>, Vec<f64>, Vec<f64>);

fn run(preset_name: &str, family: SequenceFamily, times_us: Vec<f64>, n_trajectories: usize, seed: u64) -> PyResult<Curve> {
    let p = preset(preset_name).map_err(py_err)?;
    let system = p.system.to_system().map_err(py_err)?;
    let noise = p.noise.to_model(seed).map_err(py_err)?;
    let mut plan = ExperimentPlan::new(system, noise, family, times_us.into_iter().map(us).collect());
    plan.n_trajectories = n_trajectories;
    let curve = run_experiment(&plan).map_err(py_err)?;
    Ok((curve.times.iter().map(|&t| to_us(t)).collect(), curve.p0_mean, curve.p0_sem))
}

/// XY8-N decay for a preset; returns `(times_us, p0_mean, p0_sem)`.
#[pyfunction]
#[pyo3(signature = (preset_name, n_cycles, rabi_mhz, times_us, n_trajectories=500, seed=1))]
fn simulate_xy8(
    py: Python<'_>,
    preset_name: &str,
    n_cycles: u32,
    rabi_mhz: f64,
    times_us: Vec<f64>,
    n_trajectories: usize,
    seed: u64,
) -> PyResult<Curve> {
    let family = SequenceFamily::Pulsed(xy8_spec(n_cycles, mhz(rabi_mhz)));
    py.detach(|| run(preset_name, family, times_us, n_trajectories, seed))
}

/// CCDD population curve for a preset; returns `(times_us, p0_mean, p0_sem)`.
#[pyfunction]
#[pyo3(signature = (preset_name, omega1_mhz, ratio, times_us, n_trajectories=500, seed=1))]
fn simulate_ccdd(
    py: Python<'_>,
    preset_name: &str,
    omega1_mhz: f64,
    ratio: f64,
    times_us: Vec<f64>,
    n_trajectories: usize,
    seed: u64,
) -> PyResult<Curve> {
    let family = SequenceFamily::Ccdd(CcddSpec::new(mhz(omega1_mhz), ratio, 0.0));
    py.detach(|| run(preset_name, family, times_us, n_trajectories, seed))
}

/// Fits `model` (snake_case name) and returns `{param: (value, sigma)}`.
/// Times are in µs; time-like parameters come back in µs as well.
#[pyfunction]
#[pyo3(signature = (model, times_us, p0, sigma=None, fixed=None))]
fn fit(
    model: &str,
    times_us: Vec<f64>,
    p0: Vec<f64>,
    sigma: Option<Vec<f64>>,
    fixed: Option<BTreeMap<String, f64>>,
) -> PyResult<BTreeMap<String, (f64, f64)>> {
    let kind = match model {
        "stretched_decay" => ModelKind::StretchedDecay,
        "stretched_population" => ModelKind::StretchedPopulation,
        "plain_population" => ModelKind::PlainPopulation,
        "rabi_oscillation" => ModelKind::RabiOscillation,
        "ccdd_envelope" => ModelKind::CcddEnvelope,
        "xy8_scaling" => ModelKind::Xy8Scaling,
        "exp_relaxation" => ModelKind::ExpRelaxation,
        other => return Err(PyValueError::new_err(format!("unknown model `{other}`"))),
    };
    let mut m = FitModel::new(kind);
    for (k, v) in fixed.unwrap_or_default() {
        m = m.fix(&k, v);
    }
    let sigma = sigma.unwrap_or_else(|| vec![1.0; p0.len()]);
    let r = fit_data(&times_us, &p0, &sigma, &m, None).map_err(py_err)?;
    Ok(r.params.into_iter().map(|(k, p)| (k, (p.value, p.sigma))).collect())
}

/// Signal frequency (MHz) above which CCDD beats the best pulsed sequence
/// at equal mean power, or `None` if it never does on `freqs_mhz`.
#[pyfunction]
fn crossover_mhz(t2_us: f64, tc_us: f64, omega_bar_mhz: f64, freqs_mhz: Vec<f64>) -> PyResult<Option<f64>> {
    let budget = PowerBudget::new(mhz(omega_bar_mhz), Some(mhz(omega_bar_mhz))).map_err(py_err)?;
    let grid: Vec<f64> = freqs_mhz.into_iter().map(mhz).collect();
    let table = sensitivity_crossover(&grid, us(t2_us), Some(us(tc_us)), &budget).map_err(py_err)?;
    Ok(table.crossover.map(to_mhz))
}

#[pymodule]
fn nvdecouple_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate_xy8, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ccdd, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(crossover_mhz, m)?)?;
    Ok(())
}
