//! Scenario configuration: a sectioned TOML file, every key optional.
//!
//! Frequencies are given in Hz and converted to rad/s where the model needs
//! them. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::AmplifierResponse;
use crate::model::{rad, DriveParams, LoopPhase, MediumParams, Scheme};
use crate::propagation::PropagationSettings;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: Scheme,
    /// Initial loop phase φ₀ [rad] (double-Λ only).
    pub phi0: f64,
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self { kind: Scheme::Lambda, phi0: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumSection {
    pub gamma_hz: f64,
    pub dark_decay_hz: f64,
    pub mu: f64,
    pub density: f64,
    pub omega12_hz: f64,
    /// κ̄, transfer per unit optical density.
    pub transfer_strength: f64,
    /// Drive-intensity loss exponent per unit optical density.
    pub attenuation: f64,
}

impl Default for MediumSection {
    fn default() -> Self {
        let s = PropagationSettings::default();
        Self {
            gamma_hz: 9.76e6,
            dark_decay_hz: 0.3e6,
            mu: 1.0,
            density: 1.0,
            omega12_hz: 1771.6e6,
            transfer_strength: s.transfer_strength,
            attenuation: s.attenuation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    pub rabi_hz: f64,
    pub raman_detuning_hz: f64,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self { rabi_hz: 4.79e6, raman_detuning_hz: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub band_limit_hz: f64,
    /// Injected phase-noise level [rad²/Hz]; ignored if `voltage_psd` is set.
    pub level: f64,
    /// Modulator drive noise [V²/Hz], converted with `pm_sensitivity`.
    pub voltage_psd: Option<f64>,
    /// Phase modulator sensitivity [rad/V].
    pub pm_sensitivity: f64,
    /// Free-running laser linewidths [Hz], one per field of the measured pair.
    pub linewidth_a_hz: f64,
    pub linewidth_b_hz: f64,
    pub amplifier: bool,
    pub amplifier_low_hz: f64,
    pub amplifier_high_hz: f64,
    pub amplifier_order: u32,
    pub ensemble: usize,
    pub seed: u64,
    /// Scenario default when absent.
    pub sample_rate_hz: Option<f64>,
    pub n_samples: Option<usize>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let amp = AmplifierResponse::default();
        Self {
            band_limit_hz: 100e6,
            level: 1e-10,
            voltage_psd: None,
            pm_sensitivity: 0.0163,
            linewidth_a_hz: 0.5e6,
            linewidth_b_hz: 0.5e6,
            amplifier: true,
            amplifier_low_hz: amp.low_cutoff,
            amplifier_high_hz: amp.high_cutoff,
            amplifier_order: amp.order,
            ensemble: 32,
            seed: 1,
            sample_rate_hz: None,
            n_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Optical density for single-τ scenarios.
    pub tau: f64,
    pub tau_list: Vec<f64>,
    /// Scenario default when absent.
    pub segment_len: Option<usize>,
    pub lo_offset_hz: f64,
    /// Largest optical-density step of the path integration.
    pub max_step: f64,
    /// Noise frequency at which the Δ_R transfer sweep is taken.
    pub sweep_frequency_hz: f64,
    pub sweep_detuning_hz: Vec<f64>,
    /// Off-resonant detuning for the FWHM null sweep.
    pub off_resonance_hz: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            tau: 7.3,
            tau_list: (1..=20).map(|i| 0.5 * i as f64).collect(),
            segment_len: None,
            lo_offset_hz: 260e6,
            max_step: 0.05,
            sweep_frequency_hz: 20e6,
            sweep_detuning_hz: (0..=40).map(|i| 1e6 * i as f64).collect(),
            off_resonance_hz: 8e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Write the raw oracle ensemble next to the CSVs.
    pub dump_ensemble: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into(), dump_ensemble: false }
    }
}

/// Parsed and validated scenario configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scheme: SchemeSection,
    pub medium: MediumSection,
    pub drive: DriveSection,
    pub noise: NoiseSection,
    pub analysis: AnalysisSection,
    pub output: OutputSection,
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigValidation { field: field.into(), message: message.into() }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |p| before[p + 1..].chars().count()) + 1;
    (line, column)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            Error::ConfigParse { line, column, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        let m = &self.medium;
        if !finite_pos(m.gamma_hz) {
            return Err(invalid("medium.gamma_hz", "must be > 0"));
        }
        if !(m.dark_decay_hz.is_finite() && m.dark_decay_hz >= 0.0) {
            return Err(invalid("medium.dark_decay_hz", "must be >= 0"));
        }
        if !finite_pos(m.mu) {
            return Err(invalid("medium.mu", "must be > 0"));
        }
        if !(m.density.is_finite() && m.density >= 0.0) {
            return Err(invalid("medium.density", "must be >= 0"));
        }
        if !finite_pos(m.omega12_hz) {
            return Err(invalid("medium.omega12_hz", "must be > 0"));
        }
        if !(m.transfer_strength.is_finite() && m.transfer_strength >= 0.0) {
            return Err(invalid("medium.transfer_strength", "must be >= 0"));
        }
        if !(m.attenuation.is_finite() && m.attenuation >= 0.0) {
            return Err(invalid("medium.attenuation", "must be >= 0"));
        }
        if !(self.drive.rabi_hz.is_finite() && self.drive.rabi_hz >= 0.0) {
            return Err(invalid("drive.rabi_hz", "must be >= 0"));
        }
        if !self.drive.raman_detuning_hz.is_finite() {
            return Err(invalid("drive.raman_detuning_hz", "must be finite"));
        }
        if self.drive.rabi_hz == 0.0 && m.dark_decay_hz == 0.0 {
            return Err(invalid("drive.rabi_hz", "zero drive with zero dark_decay leaves no transparency window"));
        }
        if !self.scheme.phi0.is_finite() {
            return Err(invalid("scheme.phi0", "must be finite"));
        }

        let n = &self.noise;
        if !finite_pos(n.band_limit_hz) {
            return Err(invalid("noise.band_limit_hz", "must be > 0"));
        }
        if !(n.level.is_finite() && n.level >= 0.0) {
            return Err(invalid("noise.level", "must be >= 0"));
        }
        if let Some(v) = n.voltage_psd {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid("noise.voltage_psd", "must be >= 0"));
            }
        }
        if !finite_pos(n.pm_sensitivity) {
            return Err(invalid("noise.pm_sensitivity", "must be > 0"));
        }
        if !(n.linewidth_a_hz.is_finite() && n.linewidth_a_hz >= 0.0) {
            return Err(invalid("noise.linewidth_a_hz", "must be >= 0"));
        }
        if !(n.linewidth_b_hz.is_finite() && n.linewidth_b_hz >= 0.0) {
            return Err(invalid("noise.linewidth_b_hz", "must be >= 0"));
        }
        if n.linewidth_a_hz + n.linewidth_b_hz == 0.0 {
            return Err(invalid("noise.linewidth_a_hz", "at least one laser linewidth must be > 0"));
        }
        if !(n.amplifier_low_hz > 0.0 && n.amplifier_low_hz < n.amplifier_high_hz && n.amplifier_high_hz.is_finite()) {
            return Err(invalid("noise.amplifier_low_hz", "need 0 < amplifier_low_hz < amplifier_high_hz"));
        }
        if n.amplifier_order == 0 {
            return Err(invalid("noise.amplifier_order", "must be >= 1"));
        }
        if n.ensemble < 2 {
            return Err(invalid("noise.ensemble", "must be >= 2"));
        }
        if let Some(fs) = n.sample_rate_hz {
            if !finite_pos(fs) {
                return Err(invalid("noise.sample_rate_hz", "must be > 0"));
            }
        }
        if let Some(len) = n.n_samples {
            if !len.is_power_of_two() || len < 64 {
                return Err(invalid("noise.n_samples", "must be a power of two >= 64"));
            }
        }

        let a = &self.analysis;
        if !(a.tau.is_finite() && a.tau >= 0.0) {
            return Err(invalid("analysis.tau", "must be >= 0"));
        }
        if a.tau_list.is_empty() {
            return Err(invalid("analysis.tau_list", "must not be empty"));
        }
        if a.tau_list.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(invalid("analysis.tau_list", "entries must be finite and >= 0"));
        }
        if a.tau_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("analysis.tau_list", "tau_list must be increasing"));
        }
        if let Some(seg) = a.segment_len {
            if !seg.is_power_of_two() || seg < 16 {
                return Err(invalid("analysis.segment_len", "must be a power of two >= 16"));
            }
            if let Some(len) = n.n_samples {
                if seg > len {
                    return Err(invalid("analysis.segment_len", "must not exceed noise.n_samples"));
                }
            }
        }
        if !a.lo_offset_hz.is_finite() {
            return Err(invalid("analysis.lo_offset_hz", "must be finite"));
        }
        if !(finite_pos(a.max_step) && a.max_step * m.attenuation <= 0.1) {
            return Err(invalid("analysis.max_step", "must be > 0 with max_step·attenuation <= 0.1"));
        }
        if !finite_pos(a.sweep_frequency_hz) {
            return Err(invalid("analysis.sweep_frequency_hz", "must be > 0"));
        }
        if a.sweep_detuning_hz.len() < 8 {
            return Err(invalid("analysis.sweep_detuning_hz", "need at least 8 detunings"));
        }
        if a.sweep_detuning_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("analysis.sweep_detuning_hz", "must be increasing"));
        }
        if !a.off_resonance_hz.is_finite() {
            return Err(invalid("analysis.off_resonance_hz", "must be finite"));
        }
        if self.output.dir.is_empty() {
            return Err(invalid("output.dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn medium(&self) -> MediumParams {
        let m = &self.medium;
        MediumParams {
            gamma: rad(m.gamma_hz),
            big_gamma: rad(m.dark_decay_hz),
            mu: m.mu,
            density: m.density,
            omega12: rad(m.omega12_hz),
        }
    }

    pub fn drive(&self) -> DriveParams {
        DriveParams { rabi: rad(self.drive.rabi_hz), scheme: self.scheme.kind, raman_detuning: rad(self.drive.raman_detuning_hz) }
    }

    pub fn loop_phase(&self) -> LoopPhase {
        LoopPhase::new(self.scheme.phi0)
    }

    pub fn settings(&self) -> PropagationSettings {
        PropagationSettings { transfer_strength: self.medium.transfer_strength, attenuation: self.medium.attenuation }
    }

    pub fn amplifier(&self) -> AmplifierResponse {
        let n = &self.noise;
        AmplifierResponse { low_cutoff: n.amplifier_low_hz, high_cutoff: n.amplifier_high_hz, order: n.amplifier_order }
    }

    /// Injected phase-noise level in rad²/Hz.
    pub fn noise_level(&self) -> f64 {
        match self.noise.voltage_psd {
            Some(v) => v * self.noise.pm_sensitivity.powi(2),
            None => self.noise.level,
        }
    }
}

/// Reads, parses and validates a config file.
pub fn validate_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_defaults() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.medium.omega12_hz, 1771.6e6);
        assert_eq!(cfg.noise.band_limit_hz, 100e6);
        assert_eq!(cfg.noise.amplifier_low_hz, 0.5e6);
        assert_eq!(cfg.analysis.tau, 7.3);
        assert_eq!(cfg.analysis.lo_offset_hz, 260e6);
    }

    #[test]
    fn detuning_override() {
        let cfg = ScenarioConfig::from_toml("[drive]\nraman_detuning_hz = 20e6\n").unwrap();
        assert_eq!(cfg.drive.raman_detuning_hz, 20e6);
        assert_eq!(cfg.drive().raman_detuning, rad(20e6));
    }

    #[test]
    fn decreasing_tau_list() {
        let e = ScenarioConfig::from_toml("[analysis]\ntau_list = [3, 1]\n").unwrap_err();
        match e {
            Error::ConfigValidation { field, message } => {
                assert_eq!(field, "analysis.tau_list");
                assert_eq!(message, "tau_list must be increasing");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_has_position() {
        let e = ScenarioConfig::from_toml("[noise]\nlevel = 1e-9\nbogus = 3\n").unwrap_err();
        match e {
            Error::ConfigParse { line, column, message } => {
                assert_eq!((line, column), (3, 1));
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(ScenarioConfig::from_toml("[medium\n").unwrap_err().exit_code(), 1);
    }

    #[test]
    fn scheme_and_voltage_noise() {
        let cfg = ScenarioConfig::from_toml("[scheme]\nkind = \"double-lambda\"\n[noise]\nvoltage_psd = 1e-6\n").unwrap();
        assert_eq!(cfg.drive().scheme, Scheme::DoubleLambda);
        assert!((cfg.noise_level() - 1e-6 * 0.0163f64.powi(2)).abs() < 1e-20);
    }

    #[test]
    fn validation_messages() {
        for (text, field) in [
            ("[noise]\nensemble = 1\n", "noise.ensemble"),
            ("[analysis]\ntau_list = []\n", "analysis.tau_list"),
            ("[medium]\ngamma_hz = -1.0\n", "medium.gamma_hz"),
            ("[noise]\nn_samples = 1000\n", "noise.n_samples"),
            ("[analysis]\nmax_step = 1.0\n", "analysis.max_step"),
        ] {
            match ScenarioConfig::from_toml(text).unwrap_err() {
                Error::ConfigValidation { field: f, .. } => assert_eq!(f, field),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.noise.seed = 99;
        cfg.analysis.tau_list = vec![1.0, 2.0, 4.0, 8.0];
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
