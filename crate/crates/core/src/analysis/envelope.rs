//! Quadrature demodulation of an oscillating population signal.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::engine::DecayCurve;
use crate::error::{Error, Result};

const MIN_WINDOW_POINTS: usize = 4;

/// Least-squares `c + a cos(ωt) + b sin(ωt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub c: f64,
    pub a: f64,
    pub b: f64,
    pub rss: f64,
    pub n: usize,
}

impl Harmonic {
    pub fn amplitude(&self) -> f64 {
        self.a.hypot(self.b)
    }

    /// φ in `R cos(ωt + φ)`.
    pub fn phase(&self) -> f64 {
        (-self.b).atan2(self.a)
    }
}

pub fn lsq_harmonic(x: &[f64], y: &[f64], omega: f64) -> Result<Harmonic> {
    let mut m = Matrix3::zeros();
    let mut v = Vector3::zeros();
    for (&t, &p) in x.iter().zip(y) {
        let (s, c) = (omega * t).sin_cos();
        let row = Vector3::new(1.0, c, s);
        m += row * row.transpose();
        v += row * p;
    }
    let sol = m
        .try_inverse()
        .filter(|_| x.len() >= 3)
        .map(|inv| inv * v)
        .ok_or_else(|| Error::EnvelopeExtractionFailed("harmonic fit is singular".into()))?;
    let rss = x
        .iter()
        .zip(y)
        .map(|(&t, &p)| {
            let (s, c) = (omega * t).sin_cos();
            let r = p - sol[0] - sol[1] * c - sol[2] * s;
            r * r
        })
        .sum();
    Ok(Harmonic {
        c: sol[0],
        a: sol[1],
        b: sol[2],
        rss,
        n: x.len(),
    })
}

fn explained(xs: &[&[f64]], ys: &[&[f64]], omega: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
            lsq_harmonic(x, y, omega).map(|h| tss - h.rss).unwrap_or(0.0)
        })
        .sum()
}

/// Frequency maximising the harmonic power summed over the groups. With a
/// hint the search covers ±30 % around it; otherwise it spans from one
/// cycle per record to the Nyquist limit.
pub fn scan_frequency(xs: &[&[f64]], ys: &[&[f64]], hint: Option<f64>) -> Option<f64> {
    let (lo, hi, log) = match hint {
        Some(h) if h > 0.0 => (0.7 * h, 1.3 * h, false),
        _ => {
            let mut span = 0.0f64;
            let mut dmin = f64::INFINITY;
            for x in xs {
                let (a, b) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
                span = span.max(b - a);
                for w in x.windows(2) {
                    if w[1] > w[0] {
                        dmin = dmin.min(w[1] - w[0]);
                    }
                }
            }
            if !(span > 0.0 && dmin.is_finite()) {
                return None;
            }
            (2.0 * PI / span, PI / dmin, true)
        }
    };
    let n = if log { 2000 } else { 601 };
    let at = |k: f64| {
        if log {
            lo * (hi / lo).powf(k / (n - 1) as f64)
        } else {
            lo + (hi - lo) * k / (n - 1) as f64
        }
    };
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 0..n {
        let p = explained(xs, ys, at(k as f64));
        if p > best.0 {
            best = (p, k);
        }
    }
    // Golden-section refinement within one grid step either side.
    let (mut a, mut b) = (at((best.1 as f64 - 1.0).max(0.0)), at((best.1 as f64 + 1.0).min((n - 1) as f64)));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (explained(xs, ys, c), explained(xs, ys, d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = explained(xs, ys, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = explained(xs, ys, d);
        }
    }
    Some(0.5 * (a + b))
}

/// Oscillation envelope `½ + R(t)` sampled once per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub times: Vec<f64>,
    /// `½ + R`, comparable with `½[1 + exp(−t/Tc)]`.
    pub values: Vec<f64>,
    /// Harmonic amplitude R per window.
    pub amplitudes: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Demodulation frequency, rad/s.
    pub omega: f64,
}

fn windows(times: &[f64], omega_hint: f64) -> Vec<(usize, usize)> {
    let n = times.len();
    if n < 2 {
        return vec![(0, n)];
    }
    let mut diffs: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.sort_by(f64::total_cmp);
    let dmed = diffs[diffs.len() / 2];
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..n {
        if times[k] - times[k - 1] > 2.5 * dmed {
            groups.push((start, k));
            start = k;
        }
    }
    groups.push((start, n));
    if groups.len() > 1 {
        return groups;
    }
    // Uniform sampling: consecutive blocks covering one period each.
    let period = 2.0 * PI / omega_hint;
    let mut out = Vec::new();
    let mut s = 0;
    for k in 1..=n {
        if k == n || times[k] - times[s] >= period - 0.5 * dmed {
            out.push((s, k));
            s = k;
        }
    }
    // A short remainder joins the preceding block.
    let short = |&(a, b): &(usize, usize)| b - a < MIN_WINDOW_POINTS || times[b - 1] - times[a] < 0.5 * period;
    if out.len() > 1 && out.last().is_some_and(short) {
        let (_, end) = out.pop().expect("non-empty");
        if let Some(prev) = out.last_mut() {
            prev.1 = end;
        }
    }
    out
}

/// Demodulates `curve` near `omega_hint` window by window.
///
/// Windows are the clusters separated by sampling gaps or, for uniform
/// sampling, consecutive one-period blocks. The common frequency is
/// refined to maximise the in-phase plus quadrature power.
pub fn demodulate_envelope(curve: &DecayCurve, omega_hint: f64) -> Result<Envelope> {
    if !(omega_hint.is_finite() && omega_hint > 0.0) {
        return Err(Error::param("omega_hint", "must be finite and > 0"));
    }
    let wins = windows(&curve.times, omega_hint);
    for &(a, b) in &wins {
        if b - a < MIN_WINDOW_POINTS {
            return Err(Error::EnvelopeExtractionFailed(format!(
                "window starting at {:.4e} s has {} points; need {MIN_WINDOW_POINTS}",
                curve.times.get(a).copied().unwrap_or(f64::NAN),
                b - a
            )));
        }
        let span = curve.times[b - 1] - curve.times[a];
        if span * omega_hint < PI {
            return Err(Error::EnvelopeExtractionFailed(format!(
                "window starting at {:.4e} s spans less than half an oscillation period",
                curve.times[a]
            )));
        }
    }
    let xs: Vec<&[f64]> = wins.iter().map(|&(a, b)| &curve.times[a..b]).collect();
    let ys: Vec<&[f64]> = wins.iter().map(|&(a, b)| &curve.p0_mean[a..b]).collect();
    let omega = scan_frequency(&xs, &ys, Some(omega_hint))
        .ok_or_else(|| Error::EnvelopeExtractionFailed("frequency scan failed".into()))?;

    let mut env = Envelope {
        times: Vec::new(),
        values: Vec::new(),
        amplitudes: Vec::new(),
        sigmas: Vec::new(),
        omega,
    };
    for &(a, b) in &wins {
        let (x, y) = (&curve.times[a..b], &curve.p0_mean[a..b]);
        let h = lsq_harmonic(x, y, omega)?;
        let n = (b - a) as f64;
        let sem = &curve.p0_sem[a..b];
        let point_sigma = if sem.iter().all(|s| *s > 0.0) {
            (sem.iter().map(|s| s * s).sum::<f64>() / n).sqrt()
        } else {
            (h.rss / (n - 3.0)).sqrt()
        };
        env.times.push(x.iter().sum::<f64>() / n);
        env.amplitudes.push(h.amplitude());
        env.values.push(0.5 + h.amplitude());
        env.sigmas.push(point_sigma * (2.0 / n).sqrt());
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_cosine_has_constant_envelope() {
        let w = 2.0 * PI * 0.806e6;
        let dt = 1.0 / 8.06e6;
        let mut times = Vec::new();
        for start in [0usize, 60, 150, 300] {
            for k in 0..10 {
                times.push((start + k) as f64 * dt);
            }
        }
        let amp = 0.37;
        let p: Vec<f64> = times.iter().map(|t| 0.5 + amp * (w * t + 0.3).cos()).collect();
        let curve = DecayCurve::new(times.clone(), p, vec![0.0; times.len()]).unwrap();
        let env = demodulate_envelope(&curve, 0.97 * w).unwrap();
        assert!((env.omega / w - 1.0).abs() < 1e-6);
        for r in &env.amplitudes {
            assert!((r - amp).abs() < 1e-3);
        }
    }

    #[test]
    fn short_window_fails() {
        let times = vec![0.0, 1e-7, 2e-7, 5e-6, 5.1e-6, 5.2e-6, 5.3e-6];
        let p = vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3];
        let curve = DecayCurve::new(times, p, vec![0.0; 7]).unwrap();
        assert!(matches!(
            demodulate_envelope(&curve, 2.0 * PI * 1e6),
            Err(Error::EnvelopeExtractionFailed(_))
        ));
    }
}
