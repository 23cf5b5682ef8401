mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nvdecouple::analysis::ModelKind;

/// Spin-decoupling simulator: XY8-N and CCDD decay curves, fits, sweeps
/// and AC-field sensitivity tables.
#[derive(Parser, Debug)]
#[command(name = "nvdecouple", version)]
struct Cli {
    /// Master seed; overrides the config's noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Only changes wall-clock time.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Directory for all output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one decay curve and fit it.
    Simulate { config: PathBuf },
    /// Sweep XY8 cycles, effective Rabi frequency or signal frequency.
    Sweep { config: PathBuf },
    /// Closed-form sensitivity table for both schemes.
    Sensitivity(SensitivityArgs),
    /// Compile and export the control waveform without simulating.
    Waveform { config: PathBuf },
    /// Fit a decay model to a CSV curve.
    Fit(FitArgs),
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub t2_us: f64,
    /// Omit for a pulsed-only table.
    #[arg(long)]
    pub tc_us: Option<f64>,
    /// Peak π-pulse Rabi frequency.
    #[arg(long)]
    pub rabi_mhz: f64,
    /// Average-power budget as an effective Rabi frequency; defaults to `rabi_mhz`.
    #[arg(long)]
    pub omega_bar_mhz: Option<f64>,
    /// Explicit frequency grid.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["freq_start_mhz", "freq_stop_mhz", "freq_points"])]
    pub freq_mhz: Option<Vec<f64>>,
    #[arg(long, requires_all = ["freq_stop_mhz", "freq_points"])]
    pub freq_start_mhz: Option<f64>,
    #[arg(long, requires_all = ["freq_start_mhz", "freq_points"])]
    pub freq_stop_mhz: Option<f64>,
    #[arg(long, requires_all = ["freq_start_mhz", "freq_stop_mhz"])]
    pub freq_points: Option<usize>,
    #[arg(long, default_value = "sensitivity")]
    pub stem: String,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// CSV with `time_us,p0_mean[,p0_sem]`.
    pub curve: PathBuf,
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    /// Hold a parameter fixed, as `name=value`. Repeatable.
    #[arg(long = "fix", value_parser = parse_fix)]
    pub fixed: Vec<(String, f64)>,
    /// Demodulate at this Ω₂ before fitting a `ccdd_envelope`.
    #[arg(long)]
    pub omega2_mhz: Option<f64>,
    #[arg(long)]
    pub stem: Option<String>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        let names: Vec<String> = ModelKind::ALL
            .iter()
            .map(|k| serde_json::to_value(k).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .collect();
        format!("unknown model `{s}`; expected one of {}", names.join(", "))
    })
}

fn parse_fix(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((k.trim().to_string(), v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = commands::Context {
        seed: cli.seed,
        workers: cli.workers.map(|w| w as usize),
        out_dir: cli.out_dir,
    };
    let result = match cli.command {
        Command::Simulate { config } => commands::simulate(&ctx, &config),
        Command::Sweep { config } => commands::sweep(&ctx, &config),
        Command::Sensitivity(args) => commands::sensitivity(&ctx, &args),
        Command::Waveform { config } => commands::waveform(&ctx, &config),
        Command::Fit(args) => commands::fit(&ctx, &args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
