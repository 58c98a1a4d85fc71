//! Damped least squares (Levenberg–Marquardt) for small smooth models with
//! analytic Jacobians.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// A scalar model y = f(x; p) with analytic gradient ∂f/∂p.
pub trait Model {
    fn n_params(&self) -> usize;
    /// Writes ∂f/∂p into `grad` and returns f.
    fn eval(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative parameter-change tolerance (against per-parameter scales).
    pub xtol: f64,
    /// Scale-free gradient tolerance max_i |J_i·r| / (|J_i| |r|).
    pub gtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 500, xtol: 1e-8, gtol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// RMS residual.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.sigmas[i])
    }
}

/// Raw optimizer outcome in the model's own parametrization.
#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub cost: f64,
    pub rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn residuals<M: Model>(m: &M, xs: &[f64], ys: &[f64], p: &[f64], jac: Option<&mut DMatrix<f64>>) -> DVector<f64> {
    let n = m.n_params();
    let mut g = vec![0.0; n];
    let mut r = DVector::zeros(xs.len());
    match jac {
        Some(j) => {
            for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                r[i] = m.eval(x, p, &mut g) - y;
                for k in 0..n {
                    j[(i, k)] = g[k];
                }
            }
        }
        None => {
            for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                r[i] = m.eval(x, p, &mut g) - y;
            }
        }
    }
    r
}

const STALL_COSINE: f64 = 1e-6;

fn gradient_cosine(j: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let g = j.transpose() * r;
    (0..j.ncols())
        .map(|k| {
            let jn = j.column(k).norm();
            if jn == 0.0 {
                0.0
            } else {
                g[k].abs() / (jn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Minimizes ½Σ(f(x_i; p) − y_i)² from `p0`. `scales` sets the yardstick for
/// the relative step test and should scale with the data like the parameters.
pub fn levenberg_marquardt<M: Model>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    p0: &[f64],
    scales: &[f64],
    opts: &LmOptions,
) -> LmOutcome {
    let n = model.n_params();
    let m = xs.len();
    let mut p = p0.to_vec();
    let mut j = DMatrix::zeros(m, n);
    let mut r = residuals(model, xs, ys, &p, Some(&mut j));
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        if gradient_cosine(&j, &r) < opts.gtol {
            converged = true;
            break;
        }
        let a = j.transpose() * &j;
        let g = j.transpose() * &r;
        let dmax = (0..n).map(|k| a[(k, k)]).fold(0.0, f64::max);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut damped = a.clone();
            for k in 0..n {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-15 * dmax);
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(model, xs, ys, &trial, None);
            let ct = 0.5 * rt.norm_squared();
            let small = step.iter().zip(scales).all(|(d, s)| d.abs() <= opts.xtol * s.abs());
            if ct.is_finite() && ct < cost {
                p = trial;
                r = residuals(model, xs, ys, &p, Some(&mut j));
                cost = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent at any damping: stalled at rounding level of the cost.
            converged = gradient_cosine(&j, &r) < STALL_COSINE;
            break;
        }
        if converged {
            break;
        }
    }
    if converged {
        // Gauss-Newton polish, least squares J·δ ≈ −r via SVD: resolves the stationary point
        // below the cost's rounding floor while the steps keep contracting.
        let mut last = f64::INFINITY;
        for _ in 0..8 {
            let Ok(step) = j.clone().svd(true, true).solve(&(-&r), 0.0) else { break };
            let size = step.iter().zip(scales).map(|(d, s)| (d / s).abs()).fold(0.0, f64::max);
            if !(size < 0.5 * last) || !size.is_finite() {
                break;
            }
            last = size;
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(model, xs, ys, &trial, Some(&mut j));
            p = trial;
            cost = 0.5 * rt.norm_squared();
            r = rt;
            if size < 1e-15 {
                break;
            }
        }
    }
    let a = j.transpose() * &j;
    let dof = m.saturating_sub(n).max(1) as f64;
    let s2 = 2.0 * cost / dof;
    let covariance = match a.clone().try_inverse() {
        Some(inv) => inv * s2,
        None => a.pseudo_inverse(1e-300).map(|inv| inv * s2).unwrap_or_else(|_| DMatrix::from_element(n, n, f64::INFINITY)),
    };
    LmOutcome { params: p, covariance, cost, rms: (2.0 * cost / m.max(1) as f64).sqrt(), converged, iterations }
}

/// Central finite-difference gradient, for Jacobian checks.
pub fn numeric_gradient<M: Model>(model: &M, x: f64, p: &[f64], rel_step: f64) -> Vec<f64> {
    let n = model.n_params();
    let mut g = vec![0.0; n];
    (0..n)
        .map(|k| {
            let h = rel_step * p[k].abs().max(1e-300);
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[k] += h;
            lo[k] -= h;
            (model.eval(x, &hi, &mut g) - model.eval(x, &lo, &mut g)) / (2.0 * h)
        })
        .collect()
}

/// A·(w/2)²/((f−f₀)² + (w/2)²) + b with p = [A, f₀, w, b].
#[derive(Debug, Clone, Copy, Default)]
pub struct LorentzianModel;

impl Model for LorentzianModel {
    fn n_params(&self) -> usize {
        4
    }

    fn eval(&self, f: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let (a, f0, w, b) = (p[0], p[1], p[2], p[3]);
        let h = 0.5 * w;
        let d = f - f0;
        let den = d * d + h * h;
        let shape = h * h / den;
        g[0] = shape;
        g[1] = a * h * h * 2.0 * d / (den * den);
        g[2] = a * h * d * d / (den * den);
        g[3] = 1.0;
        a * shape + b
    }
}

/// A·e^{−kτ} + c with p = [A, k, c]; the reported time constant is 1/k.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpDecayModel;

impl Model for ExpDecayModel {
    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, t: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let e = (-p[1] * t).exp();
        g[0] = e;
        g[1] = -p[0] * t * e;
        g[2] = 1.0;
        p[0] * e + p[2]
    }
}

/// A·e^{−kτ} + c with c fixed; p = [A, k].
#[derive(Debug, Clone, Copy)]
pub struct FixedAsymptoteModel {
    pub c: f64,
}

impl Model for FixedAsymptoteModel {
    fn n_params(&self) -> usize {
        2
    }

    fn eval(&self, t: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let e = (-p[1] * t).exp();
        g[0] = e;
        g[1] = -p[0] * t * e;
        p[0] * e + self.c
    }
}
