//! The CCDD phase modulation `φ(t) = 2(Ω₂/Ω₁) sin(Ω₁t)` splits the drive
//! into sidebands at multiples of Ω₁ with Bessel weights `J_n(2Ω₂/Ω₁)`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use nvdecouple::sequences::{compile_ccdd, CcddSpec};
use nvdecouple::units::mhz;

#[test]
fn sideband_weights_are_bessel_values() {
    let spec = CcddSpec::new(mhz(8.06), 0.1, 0.0);
    let spp = spec.samples_per_period as usize;
    let periods = 32;
    let wf = compile_ccdd(&CcddSpec {
        duration: periods as f64 * 2.0 * std::f64::consts::PI / spec.omega1,
        ..spec
    })
    .unwrap();
    let start = spp / 4;
    let n = periods * spp;
    let mut buf: Vec<Complex<f64>> = wf.phase[start..start + n].iter().map(|&p| Complex::from_polar(1.0, p)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bin = |k: isize| buf[k.rem_euclid(n as isize) as usize].norm() / n as f64;
    // Samples sit at mid-interval, which only shifts the sideband phases.
    assert!((bin(0) - 0.990025).abs() < 1e-5, "J0 {}", bin(0));
    assert!((bin(periods as isize) - 0.099501).abs() < 1e-5, "J1 {}", bin(periods as isize));
    assert!((bin(-(periods as isize)) - 0.099501).abs() < 1e-5);
    assert!((bin(2 * periods as isize) - 0.004983).abs() < 1e-5);
}
