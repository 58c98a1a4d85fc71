//! Scenario runners: noise transfer at fixed τ, the beat FWHM
//! sweep over τ and the low-frequency dip.
//!
//! Each runner has a closed-form path (mixing-matrix cross spectra fed into
//! the exact expectation of the Welch analyzer) and a Monte Carlo path (time
//! series synthesized, mixed per frequency, beaten and Welch-averaged). Both
//! measure the same estimator, so they agree up to ensemble noise.

use num_complex::Complex64;

use crate::analysis::{
    apply_amplifier, beat_signal, dip_depth_db, expected_beat_spectrum, extract_fwhm, fit_exp_decay,
    fit_exp_decay_fixed_asymptote, fit_lorentzian, half_max_width, AmplifierResponse, BeatSpectrum,
};
use crate::config::ScenarioConfig;
use crate::dsp::{self, rfft_freqs, welch_cross, WelchConfig};
use crate::model::{gamma_g, hz, rad, DriveParams, Scheme};
use crate::oracle::{fft_omega_grid, mix_member, stream_id, stream_rng, synth_from_psd, MixingMatrix, NoiseSource, PhaseEnsemble, PhaseSeries};
use crate::par::{try_map_range, Exec};
use crate::propagation::{band_mean, coherence, path_at, transfer_to_path, SpectrumSet};
use crate::report::{Provenance, ReportRow, ScenarioReport, Table};
use crate::{Error, Result};

/// Which estimation paths a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Closed-form only.
    Fast,
    /// Monte Carlo only.
    Oracle,
    /// Closed form for the report, Monte Carlo alongside for comparison.
    #[default]
    Both,
}

impl Mode {
    pub fn fast(self) -> bool {
        self != Mode::Oracle
    }

    pub fn oracle(self) -> bool {
        self != Mode::Fast
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Fast => "fast",
            Mode::Oracle => "oracle",
            Mode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub mode: Mode,
    pub exec: Exec,
}

const PURPOSE_TRANSFER: u64 = 1;
const PURPOSE_SWEEP: u64 = 2;
const PURPOSE_OFF_RESONANCE: u64 = 3;
const PURPOSE_DIP: u64 = 4;

/// Series length, sample rate and analyzer settings of one scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub n: usize,
    pub sample_rate: f64,
    pub welch: WelchConfig,
}

impl Sampling {
    fn from_config(cfg: &ScenarioConfig, fs: f64, n: usize, segment: usize) -> Result<Self> {
        let s = Sampling {
            n: cfg.noise.n_samples.unwrap_or(n),
            sample_rate: cfg.noise.sample_rate_hz.unwrap_or(fs),
            welch: WelchConfig::new(cfg.analysis.segment_len.unwrap_or(segment)),
        };
        if s.welch.segment_len > s.n {
            return Err(Error::ConfigValidation {
                field: "analysis.segment_len".into(),
                message: format!("segment {} exceeds series length {}", s.welch.segment_len, s.n),
            });
        }
        Ok(s)
    }

    pub fn nyquist(&self) -> f64 {
        0.5 * self.sample_rate
    }

    pub fn bins(&self) -> Vec<f64> {
        rfft_freqs(self.n, self.sample_rate)
    }
}

/// Noise injected on each field before the medium.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub sources: Vec<NoiseSource>,
    /// Amplifier band-pass applied to the component.
    pub amplified: Vec<bool>,
    pub amplifier: AmplifierResponse,
}

impl Injection {
    pub fn psd(&self, c: usize, f: f64) -> f64 {
        let h = if self.amplified[c] { self.amplifier.magnitude(f).powi(2) } else { 1.0 };
        self.sources[c].psd(f) * h
    }

    /// One-sided input PSD of every component on the FFT bins.
    pub fn auto_spectra(&self, s: &Sampling) -> Vec<Vec<f64>> {
        let f = s.bins();
        (0..self.sources.len()).map(|c| f.iter().map(|&v| self.psd(c, v)).collect()).collect()
    }

    /// Time series of one ensemble member.
    pub fn synth_member(&self, seed: u64, base: u64, member: usize, s: &Sampling) -> Result<Vec<Vec<f64>>> {
        for src in &self.sources {
            if let NoiseSource::Flat { band_limit, .. } = src {
                if *band_limit > s.nyquist() {
                    return Err(Error::Aliasing { band_limit: *band_limit, nyquist: s.nyquist() });
                }
            }
        }
        (0..self.sources.len())
            .map(|c| {
                let mut rng = stream_rng(seed, stream_id(&[base, member as u64, c as u64]));
                let src = self.sources[c];
                let raw = synth_from_psd(&mut rng, |f| src.psd(f), s.n, s.sample_rate)?;
                if self.amplified[c] {
                    Ok(apply_amplifier(&PhaseSeries::new(s.sample_rate, raw)?, &self.amplifier)?.samples)
                } else {
                    Ok(raw)
                }
            })
            .collect()
    }
}

/// What a beat spectrum is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Beat {
    /// Fields i and j against each other (relative phase φ_i − φ_j).
    Pair(usize, usize),
    /// Field i against a noiseless local oscillator.
    Lo(usize),
}

/// Mixing matrix on the FFT bins after optical density `tau`.
pub fn mixing_at(cfg: &ScenarioConfig, s: &Sampling, drive: DriveParams, tau: f64) -> Result<MixingMatrix> {
    let grid = fft_omega_grid(s.n, s.sample_rate);
    let acc = path_at(&grid, drive, cfg.loop_phase(), tau, cfg.analysis.max_step, &cfg.medium(), &cfg.settings())?;
    Ok(MixingMatrix::from_path(&acc))
}

/// One-sided PSD of the phase a beat sees, from the mixing and input spectra.
pub fn beat_phase_psd(m: &MixingMatrix, auto: &[Vec<f64>], beat: Beat) -> Result<Vec<f64>> {
    match beat {
        Beat::Pair(i, j) => m.output_relative(auto, i, j),
        Beat::Lo(i) => Ok(m.output_cross(auto, i, i)?.iter().map(|c| c.re.max(0.0)).collect()),
    }
}

/// Closed-form beat spectrum (exact expectation of the Welch analyzer).
pub fn fast_beat(m: &MixingMatrix, auto: &[Vec<f64>], beat: Beat, s: &Sampling) -> Result<BeatSpectrum> {
    let psd = beat_phase_psd(m, auto, beat)?;
    expected_beat_spectrum(&psd, s.n, s.sample_rate, &s.welch)
}

/// Welch line of a noise-free carrier: the analyzer's instrument response.
pub fn instrument_line(s: &Sampling) -> Result<BeatSpectrum> {
    expected_beat_spectrum(&vec![0.0; s.n / 2 + 1], s.n, s.sample_rate, &s.welch)
}

/// Beat spectrum with the coherent carrier e^{−σ²}·(instrument line) removed.
pub fn fast_sideband_beat(m: &MixingMatrix, auto: &[Vec<f64>], beat: Beat, s: &Sampling) -> Result<BeatSpectrum> {
    let psd = beat_phase_psd(m, auto, beat)?;
    let c = dsp::autocovariance_from_psd(&psd, s.n, s.sample_rate)?;
    let carrier = (-c[0]).exp();
    let r: Vec<Complex64> = c.iter().map(|&v| Complex64::new((v - c[0]).exp() - carrier, 0.0)).collect();
    let (offset_grid, power) = dsp::expected_welch_complex(&r, s.sample_rate, &s.welch)?;
    BeatSpectrum::new(offset_grid, power)
}

/// Resolution-corrected FWHM: measured width minus the instrument width.
pub fn corrected_fwhm(spec: &BeatSpectrum, instrument_width: f64) -> Result<(f64, f64)> {
    let raw = extract_fwhm(spec)?;
    Ok(((raw - instrument_width).max(0.0), raw))
}

/// Coherence band means of fields (0, 1): ω < Γ_g/3 and 3Γ_g ≤ ω < 10Γ_g.
pub fn coherence_summary(set: &SpectrumSet, gg: f64) -> (f64, f64) {
    let c = coherence(set);
    let first = set.omega_grid.get(1).copied().unwrap_or(0.0);
    let low = band_mean(&c.omega_grid, &c.coherence, first, gg / 3.0).unwrap_or(f64::NAN);
    let high = band_mean(&c.omega_grid, &c.coherence, 3.0 * gg, 10.0 * gg).unwrap_or(f64::NAN);
    (low, high)
}

/// Per-member Monte Carlo output for a list of mixings.
struct MemberOut {
    /// [mixing][beat] Welch power.
    beats: Vec<Vec<Vec<f64>>>,
    /// [mixing] Welch W₁₁, W₂₂, ReW₁₂, ImW₁₂ of components 0 and 1.
    cross: Vec<[Vec<f64>; 4]>,
    leak: f64,
}

/// Ensemble-level Monte Carlo result.
pub struct OracleRun {
    /// [mixing][beat][member].
    pub beats: Vec<Vec<Vec<BeatSpectrum>>>,
    /// [mixing] ensemble-mean spectrum set of components 0 and 1.
    pub sets: Vec<SpectrumSet>,
    /// Largest relative imaginary leakage of the mixing.
    pub leak: f64,
}

fn zero_series(s: &Sampling) -> Result<PhaseSeries> {
    PhaseSeries::zeros(s.sample_rate, s.n)
}

#[allow(clippy::too_many_arguments)]
pub fn run_oracle(
    seed: u64,
    base: u64,
    members: usize,
    inj: &Injection,
    s: &Sampling,
    mixings: &[MixingMatrix],
    beats: &[Beat],
    lo_offset: f64,
    exec: Exec,
) -> Result<OracleRun> {
    if members < 2 {
        return Err(Error::TooFewMembers { found: members });
    }
    let lo_carrier = if lo_offset.abs() < s.nyquist() { lo_offset } else { 0.0 };
    let outs = try_map_range(exec, members, |m| {
        let input = inj.synth_member(seed, base, m, s)?;
        let zero = zero_series(s)?;
        let mut out = MemberOut { beats: Vec::new(), cross: Vec::new(), leak: 0.0 };
        for mix in mixings {
            let (mixed, leak) = mix_member(&input, mix)?;
            out.leak = out.leak.max(leak);
            let series: Vec<PhaseSeries> =
                mixed.into_iter().map(|v| PhaseSeries::new(s.sample_rate, v)).collect::<Result<_>>()?;
            let mut row = Vec::with_capacity(beats.len());
            for b in beats {
                let spec = match *b {
                    Beat::Pair(i, j) => beat_signal(&series[i], 0.0, &series[j], 0.0, &s.welch)?,
                    Beat::Lo(i) => beat_signal(&zero, lo_carrier, &series[i], 0.0, &s.welch)?,
                };
                row.push(spec.power);
            }
            out.beats.push(row);
            let (_, aa) = welch_cross(&series[0].samples, &series[0].samples, s.sample_rate, &s.welch)?;
            let (_, bb) = welch_cross(&series[1].samples, &series[1].samples, s.sample_rate, &s.welch)?;
            let (_, ab) = welch_cross(&series[0].samples, &series[1].samples, s.sample_rate, &s.welch)?;
            out.cross.push([
                aa.iter().map(|c| c.re).collect(),
                bb.iter().map(|c| c.re).collect(),
                ab.iter().map(|c| c.re).collect(),
                ab.iter().map(|c| c.im).collect(),
            ]);
        }
        Ok::<_, Error>(out)
    })?;
    let offsets = instrument_line(s)?.offset_grid;
    let freqs = rfft_freqs(s.welch.segment_len, s.sample_rate);
    let grid: Vec<f64> = freqs.iter().map(|&f| rad(f)).collect();
    let leak = outs.iter().map(|o| o.leak).fold(0.0, f64::max);
    let k = members as f64;
    let mut all_beats = Vec::with_capacity(mixings.len());
    let mut sets = Vec::with_capacity(mixings.len());
    for t in 0..mixings.len() {
        let per_beat = (0..beats.len())
            .map(|b| {
                outs.iter()
                    .map(|o| BeatSpectrum { offset_grid: offsets.clone(), power: o.beats[t][b].clone() })
                    .collect()
            })
            .collect();
        all_beats.push(per_beat);
        let mean = |q: usize| -> Vec<f64> {
            let mut v = vec![0.0; grid.len()];
            for o in &outs {
                for (a, b) in v.iter_mut().zip(&o.cross[t][q]) {
                    *a += b;
                }
            }
            v.iter().map(|x| x / k).collect()
        };
        sets.push(SpectrumSet::new(grid.clone(), mean(0), mean(1), mean(2), mean(3))?);
    }
    Ok(OracleRun { beats: all_beats, sets, leak })
}

/// FWHM of the ensemble mean and its standard error from up to 8 member batches.
pub fn oracle_fwhm(spectra: &[BeatSpectrum], instrument_width: f64) -> Result<(f64, f64, f64)> {
    let mean = BeatSpectrum::mean(spectra)?;
    let (w, raw) = corrected_fwhm(&mean, instrument_width)?;
    let batches = spectra.len().min(8);
    let size = spectra.len() / batches;
    let widths: Vec<f64> = (0..batches)
        .map(|b| {
            let chunk = &spectra[b * size..(b + 1) * size];
            corrected_fwhm(&BeatSpectrum::mean(chunk)?, instrument_width).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let mu = widths.iter().sum::<f64>() / batches as f64;
    let sd = if batches > 1 {
        (widths.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (batches as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((w, sd / (batches as f64).sqrt(), raw))
}

fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

fn mhz_label(f: f64) -> String {
    format!("{}mhz", (f / 1e6).round() as i64)
}

fn laser_injection(cfg: &ScenarioConfig, scheme: Scheme) -> Injection {
    let a = NoiseSource::Laser { linewidth: cfg.noise.linewidth_a_hz };
    let b = NoiseSource::Laser { linewidth: cfg.noise.linewidth_b_hz };
    let sources: Vec<NoiseSource> = (0..scheme.components()).map(|c| if c % 2 == 0 { a } else { b }).collect();
    let n = sources.len();
    Injection { sources, amplified: vec![false; n], amplifier: cfg.amplifier() }
}

fn flat_injection(cfg: &ScenarioConfig, scheme: Scheme, amplifier: bool) -> Injection {
    let n = scheme.components();
    let mut sources = vec![NoiseSource::Silent; n];
    sources[0] = NoiseSource::Flat { band_limit: cfg.noise.band_limit_hz, level: cfg.noise_level() };
    let mut amplified = vec![false; n];
    amplified[0] = amplifier;
    Injection { sources, amplified, amplifier: cfg.amplifier() }
}

fn initial_gamma_g(cfg: &ScenarioConfig, drive: &DriveParams) -> f64 {
    gamma_g(&cfg.medium(), drive)
}

/// Mean power of a beat spectrum over |offset| ∈ [lo, hi].
fn band_power(s: &BeatSpectrum, lo: f64, hi: f64) -> f64 {
    s.band_mean(lo, hi).unwrap_or(0.0)
}

/// Noise transfer: S₁, S₂ against the local oscillator at fixed τ for
/// Δ_R = 0 and Δ_R = `analysis.sweep_frequency_hz`, plus the transfer
/// efficiency at that noise frequency as a function of Δ_R.
pub fn run_noise_transfer(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    cfg.validate()?;
    let s = Sampling::from_config(cfg, 1e9, 1 << 16, 1 << 12)?;
    let scheme = cfg.scheme.kind;
    let inj = flat_injection(cfg, scheme, cfg.noise.amplifier);
    let auto = inj.auto_spectra(&s);
    let tau = cfg.analysis.tau;
    let f_sweep = cfg.analysis.sweep_frequency_hz;
    let detunings = [0.0, f_sweep];
    let base_drive = cfg.drive();
    let mut report = ScenarioReport::new(Provenance::new("noise-transfer", cfg, opts.mode.label()));
    let beats = [Beat::Lo(0), Beat::Lo(1)];
    let instrument = instrument_line(&s)?;
    let instrument_width = half_max_width(&instrument)?;
    let band = cfg.noise.band_limit_hz.min(s.nyquist());

    let mixings: Vec<MixingMatrix> = detunings
        .iter()
        .map(|&d| mixing_at(cfg, &s, DriveParams { raman_detuning: rad(d), ..base_drive }, tau))
        .collect::<Result<_>>()?;
    let oracle = if opts.mode.oracle() {
        let base = stream_id(&[PURPOSE_TRANSFER]);
        let run = run_oracle(cfg.noise.seed, base, cfg.noise.ensemble, &inj, &s, &mixings, &beats, cfg.analysis.lo_offset_hz, opts.exec)?;
        report.metrics.insert("oracle_imag_leakage".into(), run.leak);
        Some(run)
    } else {
        None
    };

    for (d_idx, &d) in detunings.iter().enumerate() {
        let drive = DriveParams { raman_detuning: rad(d), ..base_drive };
        let gg_hz = hz(initial_gamma_g(cfg, &drive));
        let label = format!("dr{}", mhz_label(d));
        let mix = &mixings[d_idx];
        let mut paths: Vec<(&str, BeatSpectrum, BeatSpectrum)> = Vec::new();
        if opts.mode.fast() {
            paths.push(("fast", fast_beat(mix, &auto, beats[0], &s)?, fast_beat(mix, &auto, beats[1], &s)?));
            let set = mix.output_spectra(&auto, 0, 1)?;
            if d_idx == 0 {
                let (lo, hi) = coherence_summary(&set, rad(gg_hz));
                let rel = fast_beat(mix, &auto, Beat::Pair(0, 1), &s)?;
                let (w, _) = corrected_fwhm(&rel, instrument_width)?;
                report.rows.push(ReportRow { tau, fwhm_hz: w, fwhm_sigma_hz: 0.0, coherence_low: lo, coherence_high: hi });
            }
            report.spectrum_sets.push((format!("spectra_{label}_fast"), set));
        }
        if let Some(run) = &oracle {
            let s1 = BeatSpectrum::mean(&run.beats[d_idx][0])?;
            let s2 = BeatSpectrum::mean(&run.beats[d_idx][1])?;
            if d_idx == 0 {
                let (lo, hi) = coherence_summary(&run.sets[0], rad(gg_hz));
                let row = ReportRow { tau, fwhm_hz: 0.0, fwhm_sigma_hz: 0.0, coherence_low: lo, coherence_high: hi };
                if opts.mode.fast() {
                    report.oracle_rows = Some(vec![row]);
                } else {
                    report.rows.push(row);
                }
            }
            report.spectrum_sets.push((format!("spectra_{label}_oracle"), run.sets[d_idx].clone()));
            paths.push(("oracle", s1, s2));
        }
        for (path, s1, s2) in paths {
            let p1 = band_power(&s1, gg_hz, band);
            let p2 = band_power(&s2, gg_hz, band);
            report.metrics.insert(format!("s2_s1_db_{label}_{path}"), db(p2 / p1));
            // Share of S₂ sideband power within 2Γ_g of the Raman detuning.
            let total = band_power(&s2, 1e6, band) * (band - 1e6);
            let near_lo = (d - 2.0 * gg_hz).max(1e6);
            let near_hi = (d + 2.0 * gg_hz).min(band);
            let near = band_power(&s2, near_lo, near_hi) * (near_hi - near_lo);
            report.metrics.insert(format!("s2_band_fraction_{label}_{path}"), near / total);
            report.spectra.push((format!("s1_{label}_{path}"), s1));
            report.spectra.push((format!("s2_{label}_{path}"), s2));
        }
    }

    // Δ_R sweep of the closed-form transfer at one noise frequency.
    let grid = vec![rad(f_sweep)];
    let mut rows = Vec::new();
    for &d in &cfg.analysis.sweep_detuning_hz {
        let drive = DriveParams { raman_detuning: rad(d), ..base_drive };
        let acc = path_at(&grid, drive, cfg.loop_phase(), tau, cfg.analysis.max_step, &cfg.medium(), &cfg.settings())?;
        let m = MixingMatrix::from_path(&acc);
        let mut unit = vec![vec![0.0]; scheme.components()];
        unit[0][0] = 1.0;
        let ratio = m.output_cross(&unit, 1, 1)?[0].re;
        rows.push(vec![d, ratio, transfer_to_path(ratio), acc.x[0]]);
    }
    let sweep = BeatSpectrum::new(rows.iter().map(|r| r[0]).collect(), rows.iter().map(|r| r[3]).collect())?;
    match fit_lorentzian(&sweep, None) {
        Ok(fit) => {
            report.metrics.insert("transfer_hwhm_hz".into(), 0.5 * fit.params[2]);
            report.metrics.insert("transfer_center_hz".into(), fit.params[1]);
            report.fits.push(("transfer_lorentzian".into(), fit));
        }
        // No propagation (τ = 0 or an empty medium): nothing to fit.
        Err(Error::DegenerateData(_)) => {}
        Err(e) => return Err(e),
    }
    let drive0 = DriveParams { raman_detuning: 0.0, ..base_drive };
    report.metrics.insert("gamma_g_start_hz".into(), hz(initial_gamma_g(cfg, &drive0)));
    let end_drive = drive0.with_intensity_factor((-cfg.medium.attenuation * tau).exp());
    report.metrics.insert("gamma_g_end_hz".into(), hz(gamma_g(&cfg.medium(), &end_drive)));
    report.tables.push(Table {
        name: "transfer_sweep".into(),
        columns: vec!["detuning_hz".into(), "transfer_ratio".into(), "path_from_ratio".into(), "path_x".into()],
        rows,
    });
    Ok(report)
}

struct SweepOut {
    rows: Vec<ReportRow>,
    raw: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn sweep_fast(
    cfg: &ScenarioConfig,
    s: &Sampling,
    drive: DriveParams,
    inj: &Injection,
    mixings: &[MixingMatrix],
    instrument_width: f64,
    exec: Exec,
) -> Result<SweepOut> {
    let auto = inj.auto_spectra(s);
    let gg = initial_gamma_g(cfg, &drive);
    let taus = &cfg.analysis.tau_list;
    let per = try_map_range(exec, taus.len(), |t| {
        let m = &mixings[t];
        let spec = fast_beat(m, &auto, Beat::Pair(0, 1), s)?;
        let (w, raw) = corrected_fwhm(&spec, instrument_width)?;
        let (lo, hi) = coherence_summary(&m.output_spectra(&auto, 0, 1)?, gg);
        Ok::<_, Error>((ReportRow { tau: taus[t], fwhm_hz: w, fwhm_sigma_hz: 0.0, coherence_low: lo, coherence_high: hi }, raw))
    })?;
    Ok(SweepOut { rows: per.iter().map(|p| p.0).collect(), raw: per.iter().map(|p| p.1).collect() })
}

#[allow(clippy::too_many_arguments)]
fn sweep_oracle(
    cfg: &ScenarioConfig,
    s: &Sampling,
    drive: DriveParams,
    inj: &Injection,
    mixings: &[MixingMatrix],
    instrument_width: f64,
    purpose: u64,
    exec: Exec,
) -> Result<(SweepOut, f64)> {
    let base = stream_id(&[purpose]);
    let run = run_oracle(cfg.noise.seed, base, cfg.noise.ensemble, inj, s, mixings, &[Beat::Pair(0, 1)], 0.0, exec)?;
    let gg = initial_gamma_g(cfg, &drive);
    let mut out = SweepOut { rows: Vec::new(), raw: Vec::new() };
    for (t, &tau) in cfg.analysis.tau_list.iter().enumerate() {
        let (w, se, raw) = oracle_fwhm(&run.beats[t][0], instrument_width)?;
        let (lo, hi) = coherence_summary(&run.sets[t], gg);
        out.rows.push(ReportRow { tau, fwhm_hz: w, fwhm_sigma_hz: se, coherence_low: lo, coherence_high: hi });
        out.raw.push(raw);
    }
    Ok((out, run.leak))
}

fn fwhm_points(rows: &[ReportRow]) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.tau, r.fwhm_hz)).collect()
}

/// FWHM sweep: ω₁/ω₂ beat FWHM against τ with exponential-decay fits, at
/// the configured Raman detuning and at `analysis.off_resonance_hz`.
pub fn run_fwhm_sweep(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    cfg.validate()?;
    if cfg.analysis.tau_list.len() < 4 {
        return Err(Error::ConfigValidation { field: "analysis.tau_list".into(), message: "fwhm-sweep needs at least 4 optical densities".into() });
    }
    let s = Sampling::from_config(cfg, 32e6, 1 << 17, 1 << 13)?;
    let scheme = cfg.scheme.kind;
    let inj = laser_injection(cfg, scheme);
    let instrument_width = half_max_width(&instrument_line(&s)?)?;
    let mut report = ScenarioReport::new(Provenance::new("fwhm-sweep", cfg, opts.mode.label()));
    report.metrics.insert("instrument_width_hz".into(), instrument_width);
    report.metrics.insert("injected_dark_decay_hz".into(), cfg.medium.dark_decay_hz);
    report.metrics.insert("linewidth_sum_hz".into(), cfg.noise.linewidth_a_hz + cfg.noise.linewidth_b_hz);
    let taus = cfg.analysis.tau_list.clone();

    let cases = [
        ("", cfg.drive(), PURPOSE_SWEEP),
        ("off_resonance", DriveParams { raman_detuning: rad(cfg.analysis.off_resonance_hz), ..cfg.drive() }, PURPOSE_OFF_RESONANCE),
    ];
    for (label, drive, purpose) in cases {
        let mixings: Vec<MixingMatrix> =
            try_map_range(opts.exec, taus.len(), |t| mixing_at(cfg, &s, drive, taus[t]))?;
        let fast = if opts.mode.fast() { Some(sweep_fast(cfg, &s, drive, &inj, &mixings, instrument_width, opts.exec)?) } else { None };
        let oracle = if opts.mode.oracle() {
            let (o, leak) = sweep_oracle(cfg, &s, drive, &inj, &mixings, instrument_width, purpose, opts.exec)?;
            report.metrics.insert(join("oracle_imag_leakage", label), leak);
            Some(o)
        } else {
            None
        };
        let mut raw_rows = Vec::new();
        for (t, &tau) in taus.iter().enumerate() {
            let mut r = vec![tau];
            if let Some(f) = &fast {
                r.push(f.raw[t]);
            }
            if let Some(o) = &oracle {
                r.push(o.raw[t]);
            }
            raw_rows.push(r);
        }
        let mut columns = vec!["tau".to_string()];
        if fast.is_some() {
            columns.push("fwhm_raw_fast_hz".into());
        }
        if oracle.is_some() {
            columns.push("fwhm_raw_oracle_hz".into());
        }
        report.tables.push(Table { name: join("fwhm_raw", label), columns, rows: raw_rows });

        let fixed_c = if scheme == Scheme::Lambda && drive.raman_detuning == 0.0 { cfg.medium.dark_decay_hz } else { 0.0 };
        let mut paths: Vec<(&str, &SweepOut)> = Vec::new();
        if let Some(f) = &fast {
            paths.push(("fast", f));
        }
        if let Some(o) = &oracle {
            paths.push(("oracle", o));
        }
        for (path, out) in &paths {
            let pts = fwhm_points(&out.rows);
            let name = join(&format!("exp_{path}"), label);
            match fit_exp_decay(&pts) {
                Ok(fit) => {
                    if !fit.converged {
                        return Err(Error::NotConverged { iterations: fit.iterations });
                    }
                    report.metrics.insert(join(&format!("asymptote_{path}_hz"), label), fit.params[2]);
                    report.metrics.insert(join(&format!("asymptote_sigma_{path}_hz"), label), fit.sigmas[2]);
                    report.metrics.insert(join(&format!("amplitude_{path}_hz"), label), fit.params[0]);
                    report.metrics.insert(join(&format!("amplitude_sigma_{path}_hz"), label), fit.sigmas[0]);
                    report.metrics.insert(join(&format!("tau0_{path}"), label), fit.params[1]);
                    report.metrics.insert(join(&format!("tau0_sigma_{path}"), label), fit.sigmas[1]);
                    report.fits.push((name.clone(), fit));
                }
                Err(e @ Error::DegenerateData(_)) if !label.is_empty() => {
                    // A perfectly flat off-resonant curve has nothing to fit.
                    report.metrics.insert(join(&format!("amplitude_{path}_hz"), label), 0.0);
                    let _ = e;
                }
                Err(e) => return Err(e),
            }
            if let Ok(fixed) = fit_exp_decay_fixed_asymptote(&pts, fixed_c) {
                report.fits.push((format!("{name}_fixed"), fixed));
            }
            let widths: Vec<f64> = out.rows.iter().map(|r| r.fwhm_hz).collect();
            let max = widths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = widths.iter().cloned().fold(f64::INFINITY, f64::min);
            let mean = widths.iter().sum::<f64>() / widths.len() as f64;
            report.metrics.insert(join(&format!("flatness_{path}"), label), (max - min) / mean);
        }
        if let (Some(f), Some(o)) = (&fast, &oracle) {
            let z = f.rows.iter().zip(&o.rows).map(|(a, b)| (a.fwhm_hz - b.fwhm_hz).abs() / b.fwhm_sigma_hz.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
            report.metrics.insert(join("max_fast_oracle_z", label), z);
        }
        if label.is_empty() {
            match (fast, oracle) {
                (Some(f), Some(o)) => {
                    report.rows = f.rows;
                    report.oracle_rows = Some(o.rows);
                }
                (Some(f), None) => report.rows = f.rows,
                (None, Some(o)) => report.rows = o.rows,
                (None, None) => unreachable!("mode enables at least one path"),
            }
        } else {
            let rows = if let Some(f) = fast { f.rows } else { oracle.map(|o| o.rows).unwrap_or_default() };
            report.tables.push(Table {
                name: "summary_off_resonance".into(),
                columns: ["tau", "fwhm_hz", "fwhm_sigma_hz", "coherence_low", "coherence_high"].iter().map(|c| c.to_string()).collect(),
                rows: rows.iter().map(|r| vec![r.tau, r.fwhm_hz, r.fwhm_sigma_hz, r.coherence_low, r.coherence_high]).collect(),
            });
        }
    }
    Ok(report)
}

fn join(name: &str, label: &str) -> String {
    if label.is_empty() {
        name.to_string()
    } else {
        format!("{name}_{label}")
    }
}

/// Low and high bands of the dip metric [Hz] for a given analyzer.
pub fn dip_bands(s: &Sampling) -> ((f64, f64), (f64, f64)) {
    let rbw = s.sample_rate / s.welch.segment_len as f64;
    ((4.0 * rbw, 0.4e6), (1e6, 10e6))
}

/// Low-frequency dip: S₁₂ and S₃₄ of the double-Λ scheme at fixed τ with the
/// amplifier band-pass on the noise injected into ω₁.
pub fn run_lowfreq_dip(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    cfg.validate()?;
    if cfg.scheme.kind != Scheme::DoubleLambda {
        return Err(Error::ConfigValidation { field: "scheme.kind".into(), message: "lowfreq-dip needs the double-lambda scheme".into() });
    }
    let s = Sampling::from_config(cfg, 250e6, 1 << 17, 1 << 14)?;
    let tau = cfg.analysis.tau;
    let drive = cfg.drive();
    let mix = mixing_at(cfg, &s, drive, tau)?;
    let beats = [Beat::Pair(0, 1), Beat::Pair(2, 3)];
    let (low, high) = dip_bands(&s);
    let instrument_width = half_max_width(&instrument_line(&s)?)?;
    let gg = initial_gamma_g(cfg, &drive);
    let mut report = ScenarioReport::new(Provenance::new("lowfreq-dip", cfg, opts.mode.label()));
    let variants: &[(bool, &str)] = if cfg.noise.amplifier { &[(true, ""), (false, "no_amplifier")] } else { &[(false, "no_amplifier")] };
    for &(amp, label) in variants {
        let inj = flat_injection(cfg, Scheme::DoubleLambda, amp);
        let auto = inj.auto_spectra(&s);
        if opts.mode.fast() {
            for (b, name) in beats.iter().zip(["s12", "s34"]) {
                let side = fast_sideband_beat(&mix, &auto, *b, &s)?;
                report.metrics.insert(join(&format!("{name}_dip_db_fast"), label), dip_depth_db(&side, low, high)?);
                if label.is_empty() {
                    report.spectra.push((format!("{name}_fast"), fast_beat(&mix, &auto, *b, &s)?));
                    report.spectra.push((format!("{name}_sideband_fast"), side));
                }
            }
            if label.is_empty() {
                let (lo, hi) = coherence_summary(&mix.output_spectra(&auto, 0, 1)?, gg);
                let (w, _) = corrected_fwhm(&fast_beat(&mix, &auto, beats[0], &s)?, instrument_width)?;
                report.rows.push(ReportRow { tau, fwhm_hz: w, fwhm_sigma_hz: 0.0, coherence_low: lo, coherence_high: hi });
            }
        }
        if opts.mode.oracle() {
            let base = stream_id(&[PURPOSE_DIP, amp as u64]);
            let run = run_oracle(cfg.noise.seed, base, cfg.noise.ensemble, &inj, &s, std::slice::from_ref(&mix), &beats, 0.0, opts.exec)?;
            for (bi, name) in ["s12", "s34"].iter().enumerate() {
                let mean = BeatSpectrum::mean(&run.beats[0][bi])?;
                let side = remove_carrier(&mean, &instrument_line(&s)?);
                report.metrics.insert(join(&format!("{name}_dip_db_oracle"), label), dip_depth_db(&side, low, high)?);
                if label.is_empty() {
                    report.spectra.push((format!("{name}_oracle"), mean));
                    report.spectra.push((format!("{name}_sideband_oracle"), side));
                }
            }
            if label.is_empty() {
                let (lo, hi) = coherence_summary(&run.sets[0], gg);
                let (w, se, _) = oracle_fwhm(&run.beats[0][0], instrument_width)?;
                let row = ReportRow { tau, fwhm_hz: w, fwhm_sigma_hz: se, coherence_low: lo, coherence_high: hi };
                if opts.mode.fast() {
                    report.oracle_rows = Some(vec![row]);
                } else {
                    report.rows.push(row);
                }
                report.metrics.insert("oracle_imag_leakage".into(), run.leak);
            }
        }
    }
    Ok(report)
}

/// Scenario names accepted by [`input_ensemble`].
pub const SCENARIOS: [&str; 3] = ["noise-transfer", "fwhm-sweep", "lowfreq-dip"];

/// The unpropagated Monte Carlo input ensemble a scenario draws, member for
/// member identical to what its oracle path mixes.
pub fn input_ensemble(cfg: &ScenarioConfig, scenario: &str, exec: Exec) -> Result<PhaseEnsemble> {
    let (s, inj, base) = match scenario {
        "noise-transfer" => (
            Sampling::from_config(cfg, 1e9, 1 << 16, 1 << 12)?,
            flat_injection(cfg, cfg.scheme.kind, cfg.noise.amplifier),
            stream_id(&[PURPOSE_TRANSFER]),
        ),
        "fwhm-sweep" => (
            Sampling::from_config(cfg, 32e6, 1 << 17, 1 << 13)?,
            laser_injection(cfg, cfg.scheme.kind),
            stream_id(&[PURPOSE_SWEEP]),
        ),
        "lowfreq-dip" => (
            Sampling::from_config(cfg, 250e6, 1 << 17, 1 << 14)?,
            flat_injection(cfg, Scheme::DoubleLambda, cfg.noise.amplifier),
            stream_id(&[PURPOSE_DIP, cfg.noise.amplifier as u64]),
        ),
        other => return Err(Error::ConfigValidation { field: "scenario".into(), message: format!("unknown scenario `{other}`") }),
    };
    let members = try_map_range(exec, cfg.noise.ensemble, |m| inj.synth_member(cfg.noise.seed, base, m, &s))?;
    PhaseEnsemble::new(s.sample_rate, cfg.noise.seed, vec![0.0; inj.sources.len()], members)
}

/// Subtracts the coherent carrier, scaled to the spectrum's zero-offset bin,
/// and clamps at zero.
pub fn remove_carrier(spec: &BeatSpectrum, line: &BeatSpectrum) -> BeatSpectrum {
    let zero = line.offset_grid.iter().position(|&f| f == 0.0).unwrap_or(0);
    let scale = spec.power[zero] / line.power[zero];
    BeatSpectrum {
        offset_grid: spec.offset_grid.clone(),
        power: spec.power.iter().zip(&line.power).map(|(p, l)| (p - scale * l).max(0.0)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mut cfg: ScenarioConfig) -> ScenarioConfig {
        cfg.noise.ensemble = 4;
        cfg.noise.n_samples = Some(1 << 14);
        cfg.analysis.segment_len = Some(1 << 11);
        cfg
    }

    #[test]
    fn zero_tau_transfers_nothing() {
        let mut cfg = small(ScenarioConfig::default());
        cfg.analysis.tau = 0.0;
        let r = run_noise_transfer(&cfg, &RunOptions { mode: Mode::Fast, exec: Exec::Sequential }).unwrap();
        let set = &r.spectrum_sets[0].1;
        assert!(set.w22.iter().all(|v| *v == 0.0));
        assert!(r.table("transfer_sweep").unwrap().rows.iter().all(|row| row[1] == 0.0));
    }

    #[test]
    fn dip_needs_double_lambda() {
        let err = run_lowfreq_dip(&ScenarioConfig::default(), &RunOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn sweep_needs_four_points() {
        let mut cfg = ScenarioConfig::default();
        cfg.analysis.tau_list = vec![1.0, 2.0, 3.0];
        assert_eq!(run_fwhm_sweep(&cfg, &RunOptions::default()).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn oracle_is_schedule_independent() {
        let cfg = small(ScenarioConfig::default());
        let seq = run_noise_transfer(&cfg, &RunOptions { mode: Mode::Oracle, exec: Exec::Sequential }).unwrap();
        let par = run_noise_transfer(&cfg, &RunOptions { mode: Mode::Oracle, exec: Exec::Parallel }).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn sideband_beat_removes_line() {
        let s = Sampling { n: 1 << 12, sample_rate: 1e6, welch: WelchConfig::new(256) };
        let m = MixingMatrix::identity(2, s.bins());
        let auto = vec![vec![0.0; s.n / 2 + 1]; 2];
        let side = fast_sideband_beat(&m, &auto, Beat::Pair(0, 1), &s).unwrap();
        assert!(side.power.iter().all(|p| p.abs() < 1e-12));
    }
}
