//! Closed-form propagation of the two-field noise spectra along the optical
//! path, the per-frequency path integral x(ω), and the coherence spectrum.

use crate::model::{
    carrier_inside_window, double_shape, evolve_phi0, gamma_g, kappa0_per_tau, lambda_shape,
    mean_cos_over_step, window_weight, DriveParams, LoopPhase, MediumParams, Scheme,
};
use crate::{Error, Result};

/// W₁₁, W₂₂, ReW₁₂, ImW₁₂ on a shared grid (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    pub omega_grid: Vec<f64>,
    pub w11: Vec<f64>,
    pub w22: Vec<f64>,
    pub re_w12: Vec<f64>,
    pub im_w12: Vec<f64>,
}

impl SpectrumSet {
    pub fn new(
        omega_grid: Vec<f64>,
        w11: Vec<f64>,
        w22: Vec<f64>,
        re_w12: Vec<f64>,
        im_w12: Vec<f64>,
    ) -> Result<Self> {
        let n = omega_grid.len();
        for v in [&w11, &w22, &re_w12, &im_w12] {
            if v.len() != n {
                return Err(Error::GridMismatch { expected: n, found: v.len() });
            }
        }
        Ok(Self { omega_grid, w11, w22, re_w12, im_w12 })
    }

    /// Independent fields with the given auto-spectra.
    pub fn uncorrelated(omega_grid: Vec<f64>, w11: Vec<f64>, w22: Vec<f64>) -> Result<Self> {
        let n = omega_grid.len();
        Self::new(omega_grid, w11, w22, vec![0.0; n], vec![0.0; n])
    }

    /// Independent fields with flat auto-spectra.
    pub fn flat(omega_grid: Vec<f64>, w11: f64, w22: f64) -> Self {
        let n = omega_grid.len();
        Self {
            omega_grid,
            w11: vec![w11; n],
            w22: vec![w22; n],
            re_w12: vec![0.0; n],
            im_w12: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.omega_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega_grid.is_empty()
    }

    /// Spectrum of the relative phase ψ = φ₁ − φ₂: W₁₁ + W₂₂ − 2ReW₁₂.
    pub fn psi(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.w11[i] + self.w22[i] - 2.0 * self.re_w12[i])
            .collect()
    }

    /// Checks non-negativity and Cauchy–Schwarz to relative tolerance `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        for i in 0..self.len() {
            let (a, b) = (self.w11[i], self.w22[i]);
            let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
            if a < -tol * scale || b < -tol * scale {
                return Err(Error::DegenerateData(format!("negative auto-spectrum at index {i}")));
            }
            let c2 = self.re_w12[i].powi(2) + self.im_w12[i].powi(2);
            if c2 > a * b + tol * scale * scale {
                return Err(Error::DegenerateData(format!("Cauchy-Schwarz violated at index {i}")));
            }
        }
        Ok(())
    }
}

/// Convention for ImW₁₂ in [`propagate_spectra_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImagConvention {
    /// ImW₁₂ as produced by real sum/difference mixing of uncorrelated inputs: zero.
    #[default]
    FieldConsistent,
    /// ImW₁₂ = ½(W₁₁⁰ − W₂₂⁰)e^{−x}. Violates Cauchy–Schwarz when one input dominates.
    AsPrinted,
}

/// Parameters of the stepwise path integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationSettings {
    /// κ̄: transfer per unit optical density at the resonant-absorption reference.
    pub transfer_strength: f64,
    /// Intensity loss exponent per unit optical density.
    pub attenuation: f64,
}

impl Default for PropagationSettings {
    fn default() -> Self {
        Self { transfer_strength: 1.0, attenuation: 0.5 }
    }
}

/// Running state of the path integral x(ω) = ∫κ dτ′ (in units of the
/// resonant-absorption reference).
///
/// For the double-Λ scheme `x_loop` holds the integral for the loop-phase
/// channel, which relaxes faster than the pairwise channels inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAccumulator {
    pub omega_grid: Vec<f64>,
    pub x: Vec<f64>,
    pub x_loop: Vec<f64>,
    pub tau: f64,
    pub phi0: LoopPhase,
    /// Drive at the current position (|Ω| attenuates along the path).
    pub drive: DriveParams,
}

impl PathAccumulator {
    pub fn new(omega_grid: Vec<f64>, drive: DriveParams, phi0: LoopPhase) -> Self {
        let n = omega_grid.len();
        Self { omega_grid, x: vec![0.0; n], x_loop: vec![0.0; n], tau: 0.0, phi0, drive }
    }

    /// Integrates from the current position to `tau_end` in steps of at most `max_step`.
    ///
    /// The step sequence depends only on the start and end point, so the same
    /// target reached from zero always gives bit-identical results.
    pub fn advance_to(
        self,
        tau_end: f64,
        max_step: f64,
        medium: &MediumParams,
        settings: &PropagationSettings,
    ) -> Result<Self> {
        if !(max_step > 0.0) {
            return Err(Error::param("max_step", "must be > 0"));
        }
        let span = tau_end - self.tau;
        if span < 0.0 {
            return Err(Error::param("tau_end", "must not precede the current position"));
        }
        if span == 0.0 {
            return Ok(self);
        }
        let steps = (span / max_step).ceil().max(1.0) as usize;
        let d = span / steps as f64;
        let mut acc = self;
        for _ in 0..steps {
            acc = accumulate_x(&acc, d, medium, settings)?;
        }
        Ok(acc)
    }
}

/// One optical-density step: attenuates |Ω|², recomputes the rates with the
/// updated Γ_g and adds κ·dτ to x(ω); relaxes φ₀ for the double-Λ scheme.
pub fn accumulate_x(
    acc: &PathAccumulator,
    d_tau: f64,
    medium: &MediumParams,
    settings: &PropagationSettings,
) -> Result<PathAccumulator> {
    if !(d_tau > 0.0) || !d_tau.is_finite() {
        return Err(Error::param("d_tau", "must be > 0"));
    }
    let product = settings.attenuation * d_tau;
    if product > 0.1 {
        return Err(Error::StepTooLarge { product });
    }
    let drive = acc.drive.with_intensity_factor((-product).exp());
    let gg = gamma_g(medium, &drive);
    let scale = settings.transfer_strength * kappa0_per_tau(medium, &drive) * d_tau;
    let det = drive.raman_detuning;
    let mut next = acc.clone();
    next.tau = acc.tau + d_tau;
    next.drive = drive;
    match drive.scheme {
        Scheme::Lambda => {
            for (x, &w) in next.x.iter_mut().zip(&acc.omega_grid) {
                *x += scale * lambda_shape(w, gg, det);
            }
        }
        Scheme::DoubleLambda => {
            let inside = carrier_inside_window(medium, &drive);
            let cos_bar = mean_cos_over_step(acc.phi0, scale, inside);
            for i in 0..acc.omega_grid.len() {
                let w = acc.omega_grid[i];
                let pair = scale * double_shape(w, cos_bar, gg, det);
                next.x[i] += pair;
                next.x_loop[i] += pair + 4.0 * scale * cos_bar * window_weight(w, gg, det);
            }
            next.phi0 = evolve_phi0(acc.phi0, scale, inside);
        }
    }
    Ok(next)
}

/// Closed-form spectra after path `x`, field-consistent ImW₁₂.
pub fn propagate_spectra(s0: &SpectrumSet, x: &[f64]) -> Result<SpectrumSet> {
    propagate_spectra_with(s0, x, ImagConvention::FieldConsistent)
}

/// Closed-form spectra after path `x` from an uncorrelated start.
///
/// Only W₁₁⁰ and W₂₂⁰ of `s0` are used.
pub fn propagate_spectra_with(s0: &SpectrumSet, x: &[f64], imag: ImagConvention) -> Result<SpectrumSet> {
    let n = s0.len();
    if x.len() != n {
        return Err(Error::GridMismatch { expected: n, found: x.len() });
    }
    let mut out = SpectrumSet::flat(s0.omega_grid.clone(), 0.0, 0.0);
    for i in 0..n {
        let sum = s0.w11[i] + s0.w22[i];
        let diff = s0.w11[i] - s0.w22[i];
        let e1 = (-x[i]).exp();
        let e2 = e1 * e1;
        out.w11[i] = 0.25 * sum * (1.0 + e2) + 0.5 * diff * e1;
        out.w22[i] = 0.25 * sum * (1.0 + e2) - 0.5 * diff * e1;
        out.re_w12[i] = 0.25 * sum * (1.0 - e2);
        out.im_w12[i] = match imag {
            ImagConvention::FieldConsistent => 0.0,
            ImagConvention::AsPrinted => 0.5 * diff * e1,
        };
    }
    Ok(out)
}

/// W_ψ⁰ e^{−2x}.
pub fn propagate_psi(w_psi0: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w_psi0.len() {
        return Err(Error::GridMismatch { expected: w_psi0.len(), found: x.len() });
    }
    Ok(w_psi0.iter().zip(x).map(|(w, x)| w * (-2.0 * x).exp()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceSpectrum {
    pub omega_grid: Vec<f64>,
    pub coherence: Vec<f64>,
}

/// |W₁₂|/√(W₁₁W₂₂), zero where either auto-spectrum vanishes.
pub fn coherence(s: &SpectrumSet) -> CoherenceSpectrum {
    let coherence = (0..s.len())
        .map(|i| {
            let p = s.w11[i] * s.w22[i];
            if p <= 0.0 {
                0.0
            } else {
                s.re_w12[i].hypot(s.im_w12[i]) / p.sqrt()
            }
        })
        .collect();
    CoherenceSpectrum { omega_grid: s.omega_grid.clone(), coherence }
}

/// Mean of `values` over grid points with `lo <= ω < hi`; `None` if empty.
pub fn band_mean(omega_grid: &[f64], values: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (w, v) in omega_grid.iter().zip(values) {
        if *w >= lo && *w < hi {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Inverts the transfer law W₂₂/W₁₁⁰ = ¼(1 − e^{−x})² for x.
pub fn transfer_to_path(ratio: f64) -> f64 {
    let r = ratio.max(0.0).sqrt() * 2.0;
    if r >= 1.0 {
        f64::INFINITY
    } else {
        -(1.0 - r).ln()
    }
}

/// x at the end of the path for a uniform grid, integrating from τ = 0.
pub fn path_at(
    omega_grid: &[f64],
    drive: DriveParams,
    phi0: LoopPhase,
    tau: f64,
    max_step: f64,
    medium: &MediumParams,
    settings: &PropagationSettings,
) -> Result<PathAccumulator> {
    PathAccumulator::new(omega_grid.to_vec(), drive, phi0).advance_to(tau, max_step, medium, settings)
}
