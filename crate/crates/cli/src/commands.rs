use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};

use nvdecouple::analysis::{self, demodulate_envelope, extract_coherence_time, fit_data, CoherenceTime, FitModel, FitResult, ModelKind};
use nvdecouple::engine::{run_experiment, DecayCurve, ExperimentPlan, SequenceFamily};
use nvdecouple::evolution::TargetField;
use nvdecouple::sensing::{sensitivity_crossover, sensitivity_numeric, PowerBudget};
use nvdecouple::sequences::{CcddSpec, PulseStrength, PulseTiming, PulsedScheme, PulsedSpec};
use nvdecouple::study::{self, CyclePoint, MatchedPoint};
use nvdecouple::units::{mhz, to_mhz, to_us, us};
use nvdecouple::waveform::{effective_rabi, Readout};

use crate::config::{self, Resolved};
use crate::svg::{Plot, Series, Style};
use crate::{FitArgs, SensitivityArgs};

pub struct Context {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
}

/// Exit code 2 for bad input, 1 for failures while running.
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

type Outcome = Result<(), Failure>;

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn usage_err(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

struct Out<'a> {
    dir: &'a Path,
    stem: String,
}

impl Out<'_> {
    fn new<'a>(ctx: &'a Context, stem: &str) -> Result<Out<'a>, Failure> {
        fs::create_dir_all(&ctx.out_dir)
            .with_context(|| format!("creating {}", ctx.out_dir.display()))
            .runtime()?;
        Ok(Out {
            dir: &ctx.out_dir,
            stem: stem.to_string(),
        })
    }

    fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{suffix}", self.stem))
    }

    fn write(&self, suffix: &str, bytes: impl AsRef<[u8]>) -> Outcome {
        let p = self.path(suffix);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display())).runtime()
    }
}

fn load(ctx: &Context, path: &Path) -> Result<Resolved, Failure> {
    config::load(path, ctx.seed, ctx.workers).usage()
}

fn echo_config(out: &Out, r: &Resolved) -> Outcome {
    let text = toml::to_string(&r.config).context("serialising resolved config").runtime()?;
    out.write("resolved.cfg", text)
}

fn curve_csv(curve: &DecayCurve) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).runtime()?;
    Ok(buf)
}

fn fit_overlay(f: &FitResult, t_max: f64) -> Vec<(f64, f64)> {
    (0..=200)
        .map(|k| {
            let t = t_max * k as f64 / 200.0;
            (to_us(t), f.predict(t))
        })
        .collect()
}

fn time_label(family: &SequenceFamily) -> &'static str {
    match family {
        SequenceFamily::Ccdd(_) => "Tc",
        SequenceFamily::Pulsed(s) if s.scheme == PulsedScheme::Relaxation => "T1",
        _ => "T",
    }
}

pub fn simulate(ctx: &Context, path: &Path) -> Outcome {
    let r = load(ctx, path)?;
    let times = r.explicit_times().usage()?;
    let run = &r.config.run;
    let readout = run.readout.unwrap_or_default();
    if times.is_none() && (run.shots.is_some() || readout != Readout::Bright) {
        return Err(usage_err(
            "run: `shots` and non-bright `readout` need an explicit grid in [sweep] (times_us or t_start_us/t_stop_us/points)",
        ));
    }
    if run.fit_model.is_some() && matches!(r.family, SequenceFamily::Ccdd(_)) {
        return Err(usage_err("run.fit_model: CCDD curves are always fitted through their envelope"));
    }
    let (curve, coherence) = match times {
        Some(times) => {
            let mut plan = ExperimentPlan::new(r.system, r.noise.clone(), r.family, times);
            plan.n_trajectories = r.study.n_trajectories;
            plan.shots_per_point = run.shots;
            plan.contrast = run.contrast.unwrap_or(plan.contrast);
            plan.readout = readout;
            plan.workers = ctx.workers;
            plan.validate().usage()?;
            let curve = run_experiment(&plan).runtime()?;
            let coherence = match run.fit_model {
                Some(kind) => {
                    let f = analysis::fit(&curve, &FitModel::new(kind), None).runtime()?;
                    let name = f.free.first().cloned().unwrap_or_default();
                    CoherenceTime {
                        time: f.value(&name).unwrap_or(f64::NAN),
                        sigma: f.sigma(&name).unwrap_or(f64::NAN),
                        alpha: f.value("alpha"),
                        fit: Some(f),
                        envelope: None,
                    }
                }
                None => extract_coherence_time(&curve, &r.family).runtime()?,
            };
            (curve, coherence)
        }
        None => {
            let m = study::measure(&r.system, &r.noise, &r.family, r.t_guess(), &r.study).runtime()?;
            (m.curve, m.coherence)
        }
    };

    let out = Out::new(ctx, &r.stem)?;
    out.write("curve.csv", curve_csv(&curve)?)?;
    if let Some(f) = &coherence.fit {
        out.write("fit.json", f.to_json() + "\n")?;
    }
    let t_max = curve.times.last().copied().unwrap_or(0.0);
    let mut plot = Plot::new(&format!("{} decay", r.stem), "window (us)", "P0").with(Series::new(
        "simulated",
        curve.times.iter().zip(&curve.p0_mean).map(|(t, p)| (to_us(*t), *p)).collect(),
        Style::Markers,
    ));
    if let Some(env) = &coherence.envelope {
        plot = plot.with(Series::new(
            "envelope",
            env.times.iter().zip(&env.values).map(|(t, v)| (to_us(*t), *v)).collect(),
            Style::Markers,
        ));
    }
    if let Some(f) = &coherence.fit {
        plot = plot.with(Series::new("fit", fit_overlay(f, t_max), Style::Line));
    }
    out.write("curve.svg", plot.render())?;
    echo_config(&out, &r)?;

    let label = time_label(&r.family);
    if coherence.time.is_infinite() {
        println!("{label}: no measurable decay over the sampled windows");
    } else {
        let mut line = format!("{label} = {:.4} +/- {:.4} us", to_us(coherence.time), to_us(coherence.sigma));
        if let Some(a) = coherence.alpha {
            let _ = write!(line, ", alpha = {a:.3}");
        }
        println!("{line}");
    }
    Ok(())
}

enum SweepKind {
    Cycles(Vec<u32>),
    OmegaBar(Vec<f64>, Vec<u32>),
    Frequency(Vec<f64>),
}

fn sweep_kind(r: &Resolved) -> Result<SweepKind, Failure> {
    let s = &r.config.sweep;
    let grids = [s.n_cycles.is_some() && s.omega_bar_mhz.is_none(), s.omega_bar_mhz.is_some(), s.freq_mhz.is_some()];
    match grids.iter().filter(|g| **g).count() {
        0 => return Err(usage_err("sweep: set one of n_cycles, omega_bar_mhz, freq_mhz")),
        1 => {}
        _ => return Err(usage_err("sweep: freq_mhz cannot be combined with n_cycles or omega_bar_mhz")),
    }
    let empty = || usage_err("sweep: empty grid");
    if let Some(w) = &s.omega_bar_mhz {
        if w.is_empty() {
            return Err(empty());
        }
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(usage_err("sweep.omega_bar_mhz: values must be finite and > 0"));
        }
        let cycles = match &s.n_cycles {
            Some(c) => c.clone(),
            None => (1..=s.max_cycles.unwrap_or(12)).collect(),
        };
        if cycles.is_empty() || cycles.contains(&0) {
            return Err(usage_err("sweep: XY8 cycle numbers must be >= 1"));
        }
        return Ok(SweepKind::OmegaBar(w.clone(), cycles));
    }
    if let Some(c) = &s.n_cycles {
        if c.is_empty() {
            return Err(empty());
        }
        if c.contains(&0) {
            return Err(usage_err("sweep.n_cycles: values must be >= 1"));
        }
        return Ok(SweepKind::Cycles(c.clone()));
    }
    let f = s.freq_mhz.clone().unwrap_or_default();
    if f.is_empty() {
        return Err(empty());
    }
    if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(usage_err("sweep.freq_mhz: values must be finite and > 0"));
    }
    Ok(SweepKind::Frequency(f))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn csv_safe(e: &impl std::fmt::Display) -> String {
    e.to_string().replace([',', '\n', '"'], ";")
}

pub fn sweep(ctx: &Context, path: &Path) -> Outcome {
    let r = load(ctx, path)?;
    let kind = sweep_kind(&r)?;
    let out = Out::new(ctx, &r.stem)?;
    echo_config(&out, &r)?;
    match kind {
        SweepKind::Cycles(cycles) => sweep_cycles(&r, &out, &cycles),
        SweepKind::OmegaBar(w, cycles) => sweep_omega_bar(&r, &out, &w, &cycles),
        SweepKind::Frequency(f) => sweep_frequency(&r, &out, &f),
    }
}

fn xy8_spec(r: &Resolved) -> Result<PulsedSpec, Failure> {
    match r.family {
        SequenceFamily::Pulsed(spec) if spec.scheme == PulsedScheme::Xy8 => Ok(spec),
        _ => Err(usage_err("sweep: this grid needs a [sequence.xy8] table with rabi_mhz or ideal")),
    }
}

fn sweep_cycles(r: &Resolved, out: &Out, cycles: &[u32]) -> Outcome {
    let base = xy8_spec(r)?;
    let echo = SequenceFamily::Pulsed(PulsedSpec {
        scheme: PulsedScheme::HahnEcho,
        n_cycles: 1,
        ..base
    });
    let t_se = study::measure(&r.system, &r.noise, &echo, us(3.0), &r.study)
        .context("spin-echo reference")
        .runtime()?
        .coherence;

    let mut points: Vec<CyclePoint> = Vec::new();
    let mut csv = String::from("n_cycles,t2_us,t2_sigma_us,alpha,reliable,error\n");
    for &n in cycles {
        let family = SequenceFamily::Pulsed(PulsedSpec { n_cycles: n, ..base });
        match study::measure(&r.system, &r.noise, &family, r.t_guess(), &r.study) {
            Ok(m) => {
                let p = CyclePoint {
                    n_cycles: n,
                    measurement: m,
                    min_window: family.min_window(),
                };
                let c = &p.measurement.coherence;
                let _ = writeln!(
                    csv,
                    "{n},{},{},{},{},",
                    to_us(c.time),
                    to_us(c.sigma),
                    fmt_opt(c.alpha),
                    p.is_reliable()
                );
                points.push(p);
            }
            Err(e) => {
                let _ = writeln!(csv, "{n},,,,false,{}", csv_safe(&e));
            }
        }
    }
    out.write("sweep.csv", &csv)?;
    if points.is_empty() {
        return Err(Failure::Runtime(anyhow!("every sweep point failed; see {}", out.path("sweep.csv").display())));
    }
    let t1 = if r.system.t1.is_finite() { r.system.t1 } else { 1e3 };
    let scaling = study::scaling_fit(&points, t_se.time, t1);
    let mut plot = Plot::new("XY8 coherence vs cycles", "N", "T2 (us)").with(Series::new(
        "simulated",
        points.iter().map(|p| (p.n_cycles as f64, to_us(p.time()))).collect(),
        Style::Markers,
    ));
    match &scaling {
        Ok(f) => {
            out.write("scaling.json", f.to_json() + "\n")?;
            let n_max = cycles.iter().copied().max().unwrap_or(1) as f64;
            plot = plot.with(Series::new(
                "scaling fit",
                (0..=100)
                    .map(|k| {
                        let n = 1.0 + (n_max - 1.0) * k as f64 / 100.0;
                        (n, to_us(f.predict(n)))
                    })
                    .collect(),
                Style::Line,
            ));
            println!(
                "T_SE = {:.4} us, beta = {:.4} +/- {:.4}",
                to_us(t_se.time),
                f.value("beta").unwrap_or(f64::NAN),
                f.sigma("beta").unwrap_or(f64::NAN)
            );
        }
        Err(e) => eprintln!("warning: scaling fit failed: {e}"),
    }
    out.write("sweep.svg", plot.render())?;
    for p in &points {
        println!("N = {:2}  T2 = {:.4} us", p.n_cycles, to_us(p.time()));
    }
    Ok(())
}

fn sweep_omega_bar(r: &Resolved, out: &Out, omega_bar: &[f64], cycles: &[u32]) -> Outcome {
    xy8_spec(r)?;
    let ratio = r.config.sweep.ccdd_ratio.unwrap_or(0.1);
    CcddSpec::new(1.0, ratio, 0.0).validate().usage()?;
    let mut csv = String::from("omega_bar_mhz,best_n,t_xy8_us,t_xy8_sigma_us,t_ccdd_us,t_ccdd_sigma_us,ccdd_better,error\n");
    let mut ok: Vec<MatchedPoint> = Vec::new();
    for &w in omega_bar {
        let guesses = (r.t_guess(), 2.0 * r.t_guess());
        match study::matched_power_point(&r.system, &r.noise, mhz(w), cycles, ratio, guesses, &r.study) {
            Ok(p) => {
                let c = &p.ccdd.coherence;
                let (n, t, s) = match p.best_xy8() {
                    Some(b) => (b.n_cycles.to_string(), format!("{}", to_us(b.time())), format!("{}", to_us(b.sigma()))),
                    None => Default::default(),
                };
                let better = p.best_xy8().is_none_or(|b| c.time >= b.time());
                let _ = writeln!(csv, "{w},{n},{t},{s},{},{},{better},", to_us(c.time), to_us(c.sigma));
                ok.push(p);
            }
            Err(e) => {
                let _ = writeln!(csv, "{w},,,,,,,{}", csv_safe(&e));
            }
        }
    }
    out.write("comparison.csv", &csv)?;
    if ok.is_empty() {
        return Err(Failure::Runtime(anyhow!("every sweep point failed")));
    }
    let plot = Plot::new("Equal average power", "effective Rabi frequency (MHz)", "coherence time (us)")
        .with(Series::new(
            "XY8 (best N)",
            ok.iter()
                .filter_map(|p| p.best_xy8().map(|b| (to_mhz(p.omega_bar), to_us(b.time()))))
                .collect(),
            Style::Markers,
        ))
        .with(Series::new(
            "CCDD",
            ok.iter().map(|p| (to_mhz(p.omega_bar), to_us(p.ccdd.coherence.time))).collect(),
            Style::Markers,
        ));
    out.write("comparison.svg", plot.render())?;
    for p in &ok {
        let xy8 = p.best_xy8().map_or("n/a".to_string(), |b| format!("{:.4} us (N = {})", to_us(b.time()), b.n_cycles));
        println!(
            "omega_bar = {:.3} MHz  XY8 {xy8}  CCDD {:.4} us",
            to_mhz(p.omega_bar),
            to_us(p.ccdd.coherence.time)
        );
    }
    Ok(())
}

/// Resonant configuration for a signal at `omega_s`: plan template, probe
/// phase and interrogation time.
fn sensing_setup(r: &Resolved, omega_s: f64) -> anyhow::Result<(ExperimentPlan, f64, f64)> {
    let target = r.config.sweep.interrogation_us.map(us);
    match r.family {
        SequenceFamily::Pulsed(spec) if matches!(spec.scheme, PulsedScheme::Xy8 | PulsedScheme::Cpmg) => {
            // Odd harmonic k with room for the π pulses between centres.
            let min_k = match spec.pulse {
                PulseStrength::Rabi(rabi) => (omega_s / rabi).ceil().max(1.0) as u32,
                PulseStrength::Ideal => 1,
            };
            let k = if min_k % 2 == 0 { min_k + 1 } else { min_k };
            let n = spec.pulse_count() as f64;
            let t = n * k as f64 * PI / omega_s;
            let mut plan = ExperimentPlan::new(r.system, r.noise.clone(), r.family, vec![t]);
            plan.readout = Readout::Quadrature;
            Ok((plan, 0.0, t))
        }
        SequenceFamily::Ccdd(spec) => {
            let spec = CcddSpec { omega1: omega_s, ..spec };
            let w2 = spec.omega2();
            if w2 <= 0.0 {
                bail!("sequence.ccdd.ratio must be > 0 for sensing");
            }
            // Ω₂T = π/2 + mπ puts the signal on the steepest slope.
            let m = target.map_or(0.0, |t| ((t * w2 - PI / 2.0) / PI).round().max(0.0));
            let t = (PI / 2.0 + m * PI) / w2;
            let mut plan = ExperimentPlan::new(r.system, r.noise.clone(), SequenceFamily::Ccdd(spec), vec![t]);
            plan.readout = Readout::Bright;
            Ok((plan, PI, t))
        }
        _ => bail!("frequency sweeps need [sequence.xy8], [sequence.cpmg] or [sequence.ccdd]"),
    }
}

fn sweep_frequency(r: &Resolved, out: &Out, freqs: &[f64]) -> Outcome {
    let mut csv = String::from("freq_mhz,gamma_eta,eta,interrogation_us,p0,error\n");
    let mut pts = Vec::new();
    for &f in freqs {
        let omega_s = mhz(f);
        let res = sensing_setup(r, omega_s).and_then(|(mut plan, theta, t)| {
            plan.n_trajectories = r.study.n_trajectories;
            plan.workers = r.study.workers;
            let field = TargetField::new(omega_s, r.gamma_b(), theta)?;
            Ok(sensitivity_numeric(&plan, &field, t)?)
        });
        match res {
            Ok(s) => {
                let _ = writeln!(
                    csv,
                    "{f},{:e},{:e},{},{},",
                    s.gamma_eta,
                    s.eta,
                    to_us(s.interrogation_time),
                    s.p0
                );
                pts.push((f, s.eta));
            }
            Err(e) => {
                let _ = writeln!(csv, "{f},,,,,{}", csv_safe(&e));
            }
        }
    }
    out.write("sensitivity.csv", &csv)?;
    if pts.is_empty() {
        return Err(Failure::Runtime(anyhow!("every sweep point failed")));
    }
    let mut plot = Plot::new("Simulated sensitivity", "signal frequency (MHz)", "eta (T/sqrt(Hz))")
        .with(Series::new("simulated", pts.clone(), Style::Markers));
    plot.log_y = true;
    out.write("sensitivity.svg", plot.render())?;
    for (f, eta) in pts {
        println!("f = {f} MHz  eta = {eta:.4e} T/sqrt(Hz)");
    }
    Ok(())
}

pub fn sensitivity(ctx: &Context, a: &SensitivityArgs) -> Outcome {
    for (name, v) in [("--t2-us", Some(a.t2_us)), ("--tc-us", a.tc_us), ("--rabi-mhz", Some(a.rabi_mhz)), ("--omega-bar-mhz", a.omega_bar_mhz)] {
        if let Some(v) = v {
            if !(v.is_finite() && v > 0.0) {
                return Err(usage_err(format!("{name} must be finite and > 0")));
            }
        }
    }
    let freqs: Vec<f64> = match (&a.freq_mhz, a.freq_start_mhz, a.freq_stop_mhz, a.freq_points) {
        (Some(f), _, _, _) => f.clone(),
        (None, Some(lo), Some(hi), Some(n)) => {
            if n == 0 || !(hi >= lo && lo > 0.0) || (n == 1 && hi != lo) {
                return Err(usage_err("frequency grid needs 0 < start <= stop and points >= 1 (stop = start for one point)"));
            }
            if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
            }
        }
        _ => return Err(usage_err("give --freq-mhz or --freq-start-mhz/--freq-stop-mhz/--freq-points")),
    };
    if freqs.is_empty() || freqs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(usage_err("frequencies must be finite and > 0"));
    }
    if a.omega_bar_mhz.is_some_and(|w| w > a.rabi_mhz) {
        return Err(usage_err("--omega-bar-mhz cannot exceed --rabi-mhz"));
    }
    let budget = PowerBudget::new(mhz(a.omega_bar_mhz.unwrap_or(a.rabi_mhz)), Some(mhz(a.rabi_mhz))).usage()?;
    let grid: Vec<f64> = freqs.iter().map(|f| mhz(*f)).collect();
    let table = sensitivity_crossover(&grid, us(a.t2_us), a.tc_us.map(us), &budget).runtime()?;

    let out = Out::new(ctx, &a.stem)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf).runtime()?;
    fs::write(out.dir.join(format!("{}.csv", a.stem)), buf)
        .context("writing table")
        .runtime()?;

    let mut plot = Plot::new("Sensitivity at equal average power", "signal frequency (MHz)", "eta (T/sqrt(Hz))").with(Series::new(
        "pulsed",
        table.rows.iter().map(|r| (to_mhz(r.omega_s), r.pulsed.eta)).collect(),
        Style::Line,
    ));
    if a.tc_us.is_some() {
        plot = plot.with(Series::new(
            "CCDD",
            table
                .rows
                .iter()
                .filter_map(|r| r.ccdd.as_ref().map(|c| (to_mhz(r.omega_s), c.eta)))
                .collect(),
            Style::Line,
        ));
    }
    plot.log_y = true;
    if let Some(c) = table.crossover {
        plot.markers.push(to_mhz(c));
    }
    fs::write(out.dir.join(format!("{}.svg", a.stem)), plot.render())
        .context("writing plot")
        .runtime()?;
    match (a.tc_us, table.crossover) {
        (None, _) => println!("pulsed-only table ({} rows)", table.rows.len()),
        (Some(_), Some(c)) => println!("CCDD more sensitive above {:.4} MHz", to_mhz(c)),
        (Some(_), None) => println!("no crossover on this grid"),
    }
    Ok(())
}

pub fn waveform(ctx: &Context, path: &Path) -> Outcome {
    let r = load(ctx, path)?;
    let window = r
        .window
        .ok_or_else(|| usage_err("sequence: `waveform` needs tau_us or window_us (duration_us for CCDD)"))?;
    let family = match r.family {
        SequenceFamily::Pulsed(spec) => SequenceFamily::Pulsed(PulsedSpec {
            timing: PulseTiming::TotalTime(window),
            ..spec
        }),
        f => f,
    };
    let wf = family.compile_at(window).runtime()?;
    let wf = wf.with_readout(r.config.run.readout.unwrap_or_default());
    let out = Out::new(ctx, &r.stem)?;
    let mut csv = Vec::new();
    wf.write_csv(&mut csv).runtime()?;
    out.write("waveform.csv", csv)?;
    let mut iq = Vec::new();
    wf.write_iq(&mut iq).runtime()?;
    out.write("iq.bin", iq)?;
    let mut plot = Plot::new("Control amplitude", "time (us)", "Rabi frequency (MHz)").with(Series::new(
        "amplitude",
        wf.amplitude
            .iter()
            .enumerate()
            .map(|(k, a)| (to_us(k as f64 * wf.dt), to_mhz(*a)))
            .collect(),
        Style::Line,
    ));
    plot.markers = wf.markers.iter().map(|m| to_us(m.time)).collect();
    out.write("waveform.svg", plot.render())?;
    echo_config(&out, &r)?;
    println!(
        "samples = {}, dt = {:.4} ns, omega_bar = {:.4} MHz, peak = {:.4} MHz",
        wf.len(),
        wf.dt * 1e9,
        to_mhz(effective_rabi(&wf)),
        to_mhz(wf.peak_amplitude())
    );
    Ok(())
}

pub fn fit(ctx: &Context, a: &FitArgs) -> Outcome {
    let file = fs::File::open(&a.curve)
        .with_context(|| format!("opening {}", a.curve.display()))
        .usage()?;
    let curve = DecayCurve::read_csv(BufReader::new(file))
        .with_context(|| format!("reading {}", a.curve.display()))
        .usage()?;
    let mut model = FitModel::new(a.model);
    for (k, v) in &a.fixed {
        if !a.model.param_names().contains(&k.as_str()) {
            return Err(usage_err(format!(
                "--fix {k}: not a parameter of this model ({})",
                a.model.param_names().join(", ")
            )));
        }
        model = model.fix(k, *v);
    }
    let (x, y, s, envelope) = match a.omega2_mhz {
        Some(w2) => {
            if a.model != ModelKind::CcddEnvelope {
                return Err(usage_err("--omega2-mhz applies only to --model ccdd_envelope"));
            }
            let env = demodulate_envelope(&curve, mhz(w2)).runtime()?;
            (env.times.clone(), env.values.clone(), env.sigmas.clone(), Some(env))
        }
        // Scaling data keep the cycle number N in the first column.
        None if a.model == ModelKind::Xy8Scaling => {
            (curve.times.iter().map(|t| to_us(*t)).collect(), curve.p0_mean.clone(), curve.p0_sem.clone(), None)
        }
        None => (curve.times.clone(), curve.p0_mean.clone(), curve.p0_sem.clone(), None),
    };
    let result = fit_data(&x, &y, &s, &model, None).runtime()?;
    let stem = a.stem.clone().unwrap_or_else(|| {
        a.curve
            .file_stem()
            .map_or("curve".into(), |s| s.to_string_lossy().into_owned())
    });
    let out = Out::new(ctx, &stem)?;
    out.write("fit.json", result.to_json() + "\n")?;
    let x_is_time = a.model != ModelKind::Xy8Scaling;
    let scale = |v: f64| if x_is_time { to_us(v) } else { v };
    let mut plot = Plot::new(&format!("{stem} fit"), if x_is_time { "time (us)" } else { "N" }, "value").with(Series::new(
        "data",
        x.iter().zip(&y).map(|(t, p)| (scale(*t), *p)).collect(),
        Style::Markers,
    ));
    if let Some(env) = &envelope {
        plot = plot.with(Series::new(
            "envelope",
            env.times.iter().zip(&env.values).map(|(t, v)| (to_us(*t), *v)).collect(),
            Style::Markers,
        ));
    }
    let x_max = x.iter().copied().fold(0.0, f64::max);
    let curve_pts = (0..=200)
        .map(|k| {
            let t = x_max * k as f64 / 200.0;
            (scale(t), result.predict(t))
        })
        .collect();
    plot = plot.with(Series::new("fit", curve_pts, Style::Line));
    out.write("fit.svg", plot.render())?;
    for name in &result.free {
        let p = &result.params[name];
        println!("{name} = {:e} +/- {:e}", p.value, p.sigma);
    }
    println!("reduced chi2 = {:.4}, converged = {}", result.chi2_reduced, result.converged);
    Ok(())
}
