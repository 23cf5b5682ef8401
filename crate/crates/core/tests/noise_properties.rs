use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nvdecouple::noise::{make_trajectory, psd, sample_ou, NoiseModel, OuProcessParams};

fn model(seed: u64) -> NoiseModel {
    NoiseModel {
        detuning_ou: vec![OuProcessParams::new(7e5, 3e-6).unwrap(), OuProcessParams::new(1.5e6, 1e-7).unwrap()],
        static_detuning_sigma: 1.5e6,
        amplitude_ou: OuProcessParams::new(1.2e5, 1e-4).unwrap(),
        amplitude_static_frac: 0.005,
        amplitude_bias_frac: 0.0,
        seed,
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_and_index_replays_bit_for_bit(seed in any::<u64>(), index in any::<u64>(), n in 1usize..2000) {
        let m = model(seed);
        let a = make_trajectory(&m, n as f64 * 1e-9, 1e-9, index).unwrap();
        let b = make_trajectory(&m, n as f64 * 1e-9, 1e-9, index).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ou_samples_are_finite_and_stationary_at_start(sigma in 1e3..1e7f64, tau in 1e-8..1e-4f64, seed in any::<u64>()) {
        let p = OuProcessParams::new(sigma, tau).unwrap();
        let xs = sample_ou(&p, tau / 10.0, 500, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(xs.iter().all(|x| x.is_finite()));
        prop_assert!(xs[0].abs() < 8.0 * sigma);
    }
}

#[test]
fn ou_variance_and_autocorrelation_match_parameters() {
    let p = OuProcessParams::new(2.0, 1.0).unwrap();
    let dt = 0.1;
    let xs = sample_ou(&p, dt, 400_000, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let (m, v) = mean_var(&xs);
    // 40 000 correlation times: the variance estimate is good to ~1 %.
    assert!(m.abs() < 0.05, "mean {m}");
    assert!((v / 4.0 - 1.0).abs() < 0.03, "variance {v}");
    let lag = 5;
    let c: f64 = xs.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum::<f64>() / (xs.len() - lag) as f64;
    let expect = (-(lag as f64) * dt).exp();
    assert!((c / v - expect).abs() < 0.02, "autocorrelation {} vs {expect}", c / v);
}

#[test]
fn sliding_window_variance_is_constant() {
    let p = OuProcessParams::new(1.0, 1.0).unwrap();
    let xs = sample_ou(&p, 0.2, 200_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    // Each window spans 8 000 correlation times; the relative spread of its
    // variance is about sqrt(2·τ/T_w) ≈ 1.6 %.
    for w in xs.chunks(40_000) {
        let (_, v) = mean_var(w);
        assert!((v - 1.0).abs() < 0.08, "window variance {v}");
    }
}

#[test]
fn distinct_trajectories_are_uncorrelated() {
    let m = NoiseModel {
        detuning_ou: vec![OuProcessParams::new(1.0, 1e-8).unwrap()],
        ..NoiseModel::silent(9)
    };
    let dt = 1e-8;
    let n = 100_000;
    let a = make_trajectory(&m, n as f64 * dt, dt, 0).unwrap().delta_z;
    for idx in [1u64, 2, 1000, u64::MAX] {
        let b = make_trajectory(&m, n as f64 * dt, dt, idx).unwrap().delta_z;
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let c = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n as f64 * (va * vb).sqrt());
        // Neighbouring samples correlate (e^{-1}), so the effective count is
        // n·(1−ρ)/(1+ρ); 5/√n_eff still bounds chance correlation.
        let rho = (-1.0f64).exp();
        let n_eff = n as f64 * (1.0 - rho) / (1.0 + rho);
        assert!(c.abs() < 5.0 / n_eff.sqrt(), "index {idx}: correlation {c}");
    }
}

#[test]
fn lorentzian_integrates_to_the_variance() {
    let p = OuProcessParams::new(3.0, 0.5).unwrap();
    // ∫ S dω / 2π with ω = tan(u)/τ maps the real line onto (−π/2, π/2).
    let n = 200_000;
    let h = std::f64::consts::PI / n as f64;
    let total: f64 = (0..n)
        .map(|k| {
            let u = -std::f64::consts::FRAC_PI_2 + (k as f64 + 0.5) * h;
            let w = u.tan() / p.tau_corr;
            psd(&p, w) * (1.0 + u.tan().powi(2)) / p.tau_corr * h
        })
        .sum::<f64>()
        / std::f64::consts::TAU;
    assert!((total / 9.0 - 1.0).abs() < 1e-9, "{total}");
}
