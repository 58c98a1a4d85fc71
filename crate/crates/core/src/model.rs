//! Medium and drive parameters, transparency-window width and noise-transfer
//! rates for the Λ and double-Λ schemes, and the loop-phase relaxation.
//!
//! All frequencies and rates here are angular (rad/s).

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Converts a frequency in Hz to rad/s.
pub fn rad(hz: f64) -> f64 {
    TAU * hz
}

/// Converts an angular frequency in rad/s to Hz.
pub fn hz(rad: f64) -> f64 {
    rad / TAU
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumParams {
    /// Spontaneous decay rate γ.
    pub gamma: f64,
    /// Dark-state coherence decay rate Γ.
    #[serde(rename = "dark_decay")]
    pub big_gamma: f64,
    /// Transition coupling element μ.
    pub mu: f64,
    /// Atom density N.
    pub density: f64,
    /// Ground hyperfine splitting ω₁₂.
    pub omega12: f64,
}

impl Default for MediumParams {
    fn default() -> Self {
        Self {
            gamma: rad(9.76e6),
            big_gamma: rad(0.3e6),
            mu: 1.0,
            density: 1.0,
            omega12: rad(1771.6e6),
        }
    }
}

impl MediumParams {
    pub fn validate(&self) -> Result<()> {
        check(self.gamma > 0.0 && self.gamma.is_finite(), "gamma", "must be > 0")?;
        check(self.big_gamma >= 0.0 && self.big_gamma.is_finite(), "dark_decay", "must be >= 0")?;
        check(self.mu > 0.0 && self.mu.is_finite(), "mu", "must be > 0")?;
        check(self.density >= 0.0 && self.density.is_finite(), "density", "must be >= 0")?;
        check(self.omega12 > 0.0 && self.omega12.is_finite(), "omega12", "must be > 0")
    }
}

fn check(ok: bool, name: &'static str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::param(name, reason))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Lambda,
    DoubleLambda,
}

impl Scheme {
    /// Number of optical field components.
    pub fn components(self) -> usize {
        match self {
            Scheme::Lambda => 2,
            Scheme::DoubleLambda => 4,
        }
    }

    /// Power-broadening factor in Γ_g = Γ + factor·|Ω|²/γ.
    fn broadening(self) -> f64 {
        match self {
            Scheme::Lambda => 2.0,
            Scheme::DoubleLambda => 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    /// Rabi frequency magnitude |Ω|.
    pub rabi: f64,
    pub scheme: Scheme,
    /// Raman detuning Δ_R = ω₁ − ω₂ − ω₁₂.
    pub raman_detuning: f64,
}

impl DriveParams {
    pub fn new(rabi: f64, scheme: Scheme, raman_detuning: f64) -> Result<Self> {
        check(rabi >= 0.0 && rabi.is_finite(), "rabi", "must be >= 0")?;
        check(raman_detuning.is_finite(), "raman_detuning", "must be finite")?;
        Ok(Self { rabi, scheme, raman_detuning })
    }

    /// Same drive with |Ω|² scaled by `factor`.
    pub fn with_intensity_factor(self, factor: f64) -> Self {
        Self { rabi: self.rabi * factor.sqrt(), ..self }
    }
}

/// Mean relative phase (φ₁−φ₂)−(φ₃−φ₄) of the double-Λ loop, stored unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopPhase {
    pub phi0: f64,
}

impl LoopPhase {
    pub fn new(phi0: f64) -> Self {
        Self { phi0 }
    }
}

/// κ(ω) sampled on a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferProfile {
    pub omega_grid: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl TransferProfile {
    /// Evaluates the scheme's transfer rate on `omega_grid`.
    pub fn evaluate(
        omega_grid: &[f64],
        phi0: LoopPhase,
        drive: &DriveParams,
        medium: &MediumParams,
    ) -> Result<Self> {
        if omega_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("omega_grid", "must be strictly increasing"));
        }
        let kappa = omega_grid
            .iter()
            .map(|&w| match drive.scheme {
                Scheme::Lambda => kappa_lambda(w, drive, medium),
                Scheme::DoubleLambda => kappa_double(w, phi0, drive, medium),
            })
            .collect();
        Ok(Self { omega_grid: omega_grid.to_vec(), kappa })
    }
}

/// Transparency-window width Γ_g.
pub fn gamma_g(medium: &MediumParams, drive: &DriveParams) -> f64 {
    medium.big_gamma + drive.scheme.broadening() * drive.rabi * drive.rabi / medium.gamma
}

/// Maximum transfer rate κ₀ = 4μ|Ω|²N/(γ²Γ_g).
pub fn kappa0(medium: &MediumParams, drive: &DriveParams) -> Result<f64> {
    let gg = gamma_g(medium, drive);
    if gg <= 0.0 {
        return Err(Error::DegenerateMedium);
    }
    Ok(kappa0_formula(medium.mu, drive.rabi * drive.rabi, medium.density, medium.gamma, gg))
}

/// 4μ|Ω|²N/(γ²Γ_g) with Γ_g supplied directly.
pub fn kappa0_formula(mu: f64, rabi_sq: f64, density: f64, gamma: f64, gg: f64) -> f64 {
    4.0 * mu * rabi_sq * density / (gamma * gamma * gg)
}

/// κ₀ in units of the resonant-absorption reference 2μN/γ, i.e. 2|Ω|²/(γΓ_g).
///
/// This is the transfer per unit optical density at the rate maximum. It
/// vanishes without drive and saturates at 1 (Λ) or ½ (double-Λ) when power
/// broadening dominates Γ.
pub fn kappa0_per_tau(medium: &MediumParams, drive: &DriveParams) -> f64 {
    let gg = gamma_g(medium, drive);
    if gg <= 0.0 || medium.density == 0.0 {
        return 0.0;
    }
    2.0 * drive.rabi * drive.rabi / (medium.gamma * gg)
}

/// κ/κ₀ for the Λ scheme.
pub fn lambda_shape(omega: f64, gg: f64, detuning: f64) -> f64 {
    let g2 = gg * gg;
    if g2 == 0.0 {
        return 0.0;
    }
    let d = omega - detuning;
    (g2 / (g2 + d * d)) * (omega * omega / (g2 + omega * omega))
}

/// κ/κ₀ for the double-Λ scheme at cos φ₀ = `cos_phi0`.
pub fn double_shape(omega: f64, cos_phi0: f64, gg: f64, detuning: f64) -> f64 {
    let g2 = gg * gg;
    let d2 = (omega - detuning).powi(2);
    if g2 + d2 == 0.0 {
        return cos_phi0;
    }
    (g2 * cos_phi0 + d2 * (1.0 + cos_phi0)) / (g2 + d2)
}

/// Window weight Γ_g²/(Γ_g²+(ω−Δ_R)²).
pub fn window_weight(omega: f64, gg: f64, detuning: f64) -> f64 {
    let g2 = gg * gg;
    let d2 = (omega - detuning).powi(2);
    if g2 + d2 == 0.0 {
        1.0
    } else {
        g2 / (g2 + d2)
    }
}

/// Λ-scheme transfer rate κ(ω). Zero when there is no drive and no Γ.
pub fn kappa_lambda(omega: f64, drive: &DriveParams, medium: &MediumParams) -> f64 {
    match kappa0(medium, drive) {
        Ok(k0) => k0 * lambda_shape(omega, gamma_g(medium, drive), drive.raman_detuning),
        Err(_) => 0.0,
    }
}

/// Double-Λ transfer rate κ(ω) at loop phase φ₀. Negative values mean noise growth.
pub fn kappa_double(omega: f64, phi0: LoopPhase, drive: &DriveParams, medium: &MediumParams) -> f64 {
    match kappa0(medium, drive) {
        Ok(k0) => {
            k0 * double_shape(omega, phi0.phi0.cos(), gamma_g(medium, drive), drive.raman_detuning)
        }
        Err(_) => 0.0,
    }
}

/// Whether the carrier loop sits inside the transparency window, |Δ_R| < Γ_g.
pub fn carrier_inside_window(medium: &MediumParams, drive: &DriveParams) -> bool {
    drive.raman_detuning.abs() < gamma_g(medium, drive)
}

/// Splits φ into 2πn + r with r ∈ (−π, π].
fn reduce(phi: f64) -> (f64, f64) {
    let n = (phi / TAU).round();
    let mut r = phi - n * TAU;
    let mut base = n * TAU;
    if r <= -PI {
        r += TAU;
        base -= TAU;
    } else if r > PI {
        r -= TAU;
        base += TAU;
    }
    (base, r)
}

/// Relaxes φ₀ along dφ₀/dx = −4 sin φ₀ over `x_step` inside the window;
/// leaves it unchanged outside.
pub fn evolve_phi0(phi0_in: LoopPhase, x_step: f64, inside_window: bool) -> LoopPhase {
    if !inside_window || x_step == 0.0 {
        return phi0_in;
    }
    let (base, r) = reduce(phi0_in.phi0);
    if r == PI || r == 0.0 {
        return phi0_in;
    }
    let t = (0.5 * r).tan() * (-4.0 * x_step).exp();
    LoopPhase::new(base + 2.0 * t.atan())
}

/// Mean of cos φ₀ over a relaxation step of length `x_step`.
pub fn mean_cos_over_step(phi0_in: LoopPhase, x_step: f64, inside_window: bool) -> f64 {
    let c0 = phi0_in.phi0.cos();
    if !inside_window || x_step <= 0.0 {
        return c0;
    }
    let (_, r) = reduce(phi0_in.phi0);
    if r == PI || r == 0.0 {
        return c0;
    }
    // cos φ = (1 − t²)/(1 + t²) with t = t₀e^{−4s};
    // ∫₀ˣ cos φ ds = x + ¼ ln((1 + t₀²e^{−8x})/(1 + t₀²)).
    let t0sq = (0.5 * r).tan().powi(2);
    let integral = x_step + 0.25 * ((1.0 + t0sq * (-8.0 * x_step).exp()) / (1.0 + t0sq)).ln();
    integral / x_step
}
