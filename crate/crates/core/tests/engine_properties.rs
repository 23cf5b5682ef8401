use proptest::prelude::*;

use nvdecouple::analysis::{extract_coherence_time, fit, FitModel, ModelKind};
use nvdecouple::engine::{run_experiment, DecayCurve, ExperimentPlan, SequenceFamily};
use nvdecouple::noise::NoiseModel;
use nvdecouple::preset::preset;
use nvdecouple::sequences::{CcddSpec, PulseStrength, PulseTiming, PulsedScheme, PulsedSpec};
use nvdecouple::spin::SpinSystem;
use nvdecouple::units::{mhz, us};

fn nanodiamond() -> (SpinSystem, NoiseModel) {
    let p = preset("nanodiamond").unwrap();
    (p.system.to_system().unwrap(), p.noise.to_model(1).unwrap())
}

fn echo() -> SequenceFamily {
    SequenceFamily::Pulsed(PulsedSpec::new(
        PulsedScheme::HahnEcho,
        1,
        PulseStrength::Rabi(mhz(8.5)),
        PulseTiming::TotalTime(0.0),
    ))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn worker_count_never_changes_results(seed in any::<u64>(), workers in 2usize..6, ccdd in any::<bool>()) {
        let (sys, noise) = nanodiamond();
        let family = if ccdd { SequenceFamily::Ccdd(CcddSpec::new(mhz(8.06), 0.1, 0.0)) } else { echo() };
        let mut plan = ExperimentPlan::new(sys, noise.with_seed(seed), family, vec![us(1.0), us(2.5)]);
        plan.n_trajectories = 64;
        plan.workers = Some(1);
        let one = run_experiment(&plan).unwrap();
        plan.workers = Some(workers);
        let many = run_experiment(&plan).unwrap();
        let bits = |c: &DecayCurve| c.p0_mean.iter().chain(&c.p0_sem).map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&one), bits(&many));
    }
}

proptest! {
    #[test]
    fn csv_round_trip(rows in prop::collection::vec((0.0..1e-3f64, 0.0..=1.0f64, 0.0..0.5f64), 1..40)) {
        let curve = DecayCurve::new(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
        ).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let back = DecayCurve::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(&back.p0_mean, &curve.p0_mean);
        prop_assert_eq!(&back.p0_sem, &curve.p0_sem);
        for (a, b) in back.times.iter().zip(&curve.times) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }
    }
}

#[test]
fn sem_falls_as_inverse_root_of_trajectories() {
    let (sys, noise) = nanodiamond();
    let mut plan = ExperimentPlan::new(sys, noise, echo(), vec![us(3.0)]);
    let scaled: Vec<f64> = [100usize, 1000, 10_000]
        .iter()
        .map(|&n| {
            plan.n_trajectories = n;
            run_experiment(&plan).unwrap().p0_sem[0] * (n as f64).sqrt()
        })
        .collect();
    for s in &scaled[..2] {
        assert!((s / scaled[2] - 1.0).abs() < 0.2, "sem·√n = {scaled:?}");
    }
}

#[test]
fn relaxation_only_recovers_t1() {
    let t1 = us(87.35);
    let sys = SpinSystem::rotating(mhz(2870.0), t1).unwrap();
    let family = SequenceFamily::Pulsed(PulsedSpec::new(
        PulsedScheme::Relaxation,
        1,
        PulseStrength::Rabi(mhz(8.5)),
        PulseTiming::TotalTime(0.0),
    ));
    let times: Vec<f64> = (0..25).map(|k| k as f64 * us(12.0)).collect();
    let mut plan = ExperimentPlan::new(sys, NoiseModel::silent(3), family, times);
    plan.n_trajectories = 1;
    let c = extract_coherence_time(&run_experiment(&plan).unwrap(), &family).unwrap();
    assert!((c.time / t1 - 1.0).abs() < 0.02, "T1 = {}", c.time);
}

#[test]
fn echo_curve_fits_the_stretched_model_to_noise_level() {
    let (sys, noise) = nanodiamond();
    let times: Vec<f64> = (1..=24).map(|k| k as f64 * us(0.3)).collect();
    let plan = ExperimentPlan::new(sys, noise, echo(), times);
    let curve = run_experiment(&plan).unwrap();
    let f = fit(&curve, &FitModel::new(ModelKind::StretchedPopulation), None).unwrap();
    let rms = (curve
        .times
        .iter()
        .zip(&curve.p0_mean)
        .map(|(&t, &p)| (p - f.predict(t)).powi(2))
        .sum::<f64>()
        / curve.len() as f64)
        .sqrt();
    let mean_sem = curve.p0_sem.iter().sum::<f64>() / curve.len() as f64;
    assert!(rms < 2.0 * mean_sem, "residual rms {rms} vs mean sem {mean_sem}");
}
