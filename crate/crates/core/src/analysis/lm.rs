//! Levenberg–Marquardt with Marquardt diagonal scaling.

use nalgebra::{DMatrix, DVector};

pub(crate) const MAX_ITERATIONS: usize = 200;
pub(crate) const STEP_TOL: f64 = 1e-10;

pub(crate) struct Problem<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    /// Per-point weights `1/σ²`.
    pub w: &'a [f64],
    /// Model value and gradient with respect to the free parameters.
    pub eval: &'a dyn Fn(f64, &[f64], &mut [f64]) -> f64,
    /// Parameter domain check.
    pub admissible: &'a dyn Fn(&[f64]) -> bool,
}

pub(crate) struct Solution {
    pub params: Vec<f64>,
    pub chi2: f64,
    /// `JᵀWJ` at the optimum.
    pub normal: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn chi2(p: &Problem, params: &[f64], grad: &mut [f64]) -> f64 {
    let mut s = 0.0;
    for ((&x, &y), &w) in p.x.iter().zip(p.y).zip(p.w) {
        let r = y - (p.eval)(x, params, grad);
        s += w * r * r;
    }
    s
}

fn linearise(p: &Problem, params: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let m = params.len();
    let mut jtj = DMatrix::zeros(m, m);
    let mut jtr = DVector::zeros(m);
    let mut grad = vec![0.0; m];
    let mut s = 0.0;
    for ((&x, &y), &w) in p.x.iter().zip(p.y).zip(p.w) {
        let f = (p.eval)(x, params, &mut grad);
        let r = y - f;
        s += w * r * r;
        for a in 0..m {
            jtr[a] += w * grad[a] * r;
            for b in 0..=a {
                jtj[(a, b)] += w * grad[a] * grad[b];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            jtj[(b, a)] = jtj[(a, b)];
        }
    }
    (jtj, jtr, s)
}

pub(crate) fn solve(p: &Problem, start: &[f64]) -> Solution {
    let m = start.len();
    let mut params = start.to_vec();
    let mut scratch = vec![0.0; m];
    let (mut jtj, mut jtr, mut cost) = linearise(p, &params);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..m {
                let d = jtj[(k, k)];
                a[(k, k)] = d + lambda * if d > 0.0 { d } else { 1.0 };
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            if (p.admissible)(&trial) {
                let c = chi2(p, &trial, &mut scratch);
                if c.is_finite() && c <= cost {
                    let rel = step
                        .iter()
                        .zip(&params)
                        .map(|(s, v)| s.abs() / v.abs().max(1e-300))
                        .fold(0.0, f64::max);
                    params = trial;
                    (jtj, jtr, cost) = linearise(p, &params);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < STEP_TOL || cost == 0.0 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No downhill step exists at any damping: a minimum to precision.
            converged = true;
            break;
        }
    }
    Solution {
        params,
        chi2: cost,
        normal: jtj,
        converged,
        iterations,
    }
}
