//! Synthetic measurement chain: heterodyne beat, noise amplifier, Welch PSD,
//! Lorentzian and exponential fits and FWHM extraction.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, beat_autocorrelation, expected_welch_complex, WelchConfig, Window};
use crate::fit::{
    levenberg_marquardt, ExpDecayModel, FitResult, FixedAsymptoteModel, LmOptions, LmOutcome, LorentzianModel,
};
use crate::oracle::PhaseSeries;
use crate::{Error, Result};

/// Beat-note power density on offsets from the carrier difference.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSpectrum {
    pub offset_grid: Vec<f64>,
    pub power: Vec<f64>,
}

impl BeatSpectrum {
    pub fn new(offset_grid: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        if offset_grid.len() != power.len() {
            return Err(Error::GridMismatch { expected: offset_grid.len(), found: power.len() });
        }
        Ok(Self { offset_grid, power })
    }

    pub fn resolution(&self) -> f64 {
        self.offset_grid.get(1).map_or(0.0, |b| b - self.offset_grid[0])
    }

    /// Mean power over |offset| in [lo, hi].
    pub fn band_mean(&self, lo: f64, hi: f64) -> Option<f64> {
        let (mut s, mut n) = (0.0, 0usize);
        for (f, p) in self.offset_grid.iter().zip(&self.power) {
            let a = f.abs();
            if a >= lo && a <= hi {
                s += p;
                n += 1;
            }
        }
        (n > 0).then(|| s / n as f64)
    }

    /// Pointwise ensemble mean of spectra on a shared grid.
    pub fn mean(spectra: &[BeatSpectrum]) -> Result<BeatSpectrum> {
        let first = spectra.first().ok_or(Error::InsufficientPoints { needed: 1, found: 0 })?;
        let n = first.power.len();
        let mut power = vec![0.0; n];
        for s in spectra {
            if s.power.len() != n {
                return Err(Error::GridMismatch { expected: n, found: s.power.len() });
            }
            for (a, b) in power.iter_mut().zip(&s.power) {
                *a += b;
            }
        }
        let k = spectra.len() as f64;
        power.iter_mut().for_each(|p| *p /= k);
        Ok(BeatSpectrum { offset_grid: first.offset_grid.clone(), power })
    }
}

/// Ideal band-pass with Butterworth magnitude roll-off on each edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplifierResponse {
    pub low_cutoff: f64,
    pub high_cutoff: f64,
    pub order: u32,
}

impl Default for AmplifierResponse {
    fn default() -> Self {
        Self { low_cutoff: 0.5e6, high_cutoff: 100e6, order: 4 }
    }
}

impl AmplifierResponse {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_cutoff > 0.0 && self.low_cutoff < self.high_cutoff) {
            return Err(Error::param("amplifier", "need 0 < low_cutoff < high_cutoff"));
        }
        if self.order == 0 {
            return Err(Error::param("amplifier", "order must be >= 1"));
        }
        Ok(())
    }

    /// |H(f)|.
    pub fn magnitude(&self, f: f64) -> f64 {
        let f = f.abs();
        if f == 0.0 {
            return 0.0;
        }
        let n = 2 * self.order as i32;
        let lo = 1.0 / (1.0 + (self.low_cutoff / f).powi(n)).sqrt();
        let hi = 1.0 / (1.0 + (f / self.high_cutoff).powi(n)).sqrt();
        lo * hi
    }
}

/// Zero-phase band-pass of a phase series in the FFT domain.
pub fn apply_amplifier(s: &PhaseSeries, r: &AmplifierResponse) -> Result<PhaseSeries> {
    r.validate()?;
    let n = s.len();
    let mut buf = dsp::fft_real(&s.samples);
    let df = s.sample_rate / n as f64;
    for k in 0..n {
        let kk = if k <= n / 2 { k } else { n - k };
        buf[k] *= r.magnitude(kk as f64 * df);
    }
    dsp::inverse(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    PhaseSeries::new(s.sample_rate, buf.into_iter().map(|c| c.re * inv).collect())
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Psd {
    /// ∫PSD df on the bin grid.
    pub fn integral(&self) -> f64 {
        let df = self.freqs.get(1).map_or(0.0, |b| b - self.freqs[0]);
        dsp::pairwise_sum(&self.power) * df
    }
}

pub fn welch_psd(s: &PhaseSeries, segment_len: usize, overlap_fraction: f64, window: Window) -> Result<Psd> {
    let cfg = WelchConfig { segment_len, overlap: overlap_fraction, window };
    let (freqs, power) = dsp::welch_real(&s.samples, s.sample_rate, &cfg)?;
    Ok(Psd { freqs, power })
}

/// Complex beat envelope e^{i(φ_a − φ_b)} after mixing the two carriers and
/// shifting the difference frequency to zero.
pub fn beat_envelope(a: &PhaseSeries, carrier_a: f64, b: &PhaseSeries, carrier_b: f64) -> Result<Vec<Complex64>> {
    if a.sample_rate != b.sample_rate || a.len() != b.len() {
        return Err(Error::SeriesMismatch("beat partners differ in rate or length".into()));
    }
    let diff = carrier_a - carrier_b;
    let nyq = a.nyquist();
    if diff.abs() >= nyq {
        return Err(Error::Nyquist { difference: diff, nyquist: nyq });
    }
    let dt = 1.0 / a.sample_rate;
    let w = std::f64::consts::TAU * diff * dt;
    Ok((0..a.len())
        .map(|i| {
            let t = i as f64;
            let mixed = Complex64::from_polar(1.0, w * t + a.samples[i]) * Complex64::from_polar(1.0, b.samples[i]).conj();
            mixed * Complex64::from_polar(1.0, -w * t)
        })
        .collect())
}

/// Heterodyne beat spectrum of two fields, centered on the carrier difference.
pub fn beat_signal(a: &PhaseSeries, carrier_a: f64, b: &PhaseSeries, carrier_b: f64, welch: &WelchConfig) -> Result<BeatSpectrum> {
    let z = beat_envelope(a, carrier_a, b, carrier_b)?;
    let (offset_grid, power) = dsp::welch_complex(&z, a.sample_rate, welch)?;
    BeatSpectrum::new(offset_grid, power)
}

/// Exact expectation of [`beat_signal`] when the relative phase is Gaussian
/// with one-sided PSD `psd` on the FFT bins of an `n`-sample series.
pub fn expected_beat_spectrum(psd: &[f64], n: usize, sample_rate: f64, welch: &WelchConfig) -> Result<BeatSpectrum> {
    if welch.segment_len > n {
        return Err(Error::SegmentTooLong { segment_len: welch.segment_len, len: n });
    }
    let r = beat_autocorrelation(psd, n, sample_rate)?;
    let (offset_grid, power) = expected_welch_complex(&r, sample_rate, welch)?;
    BeatSpectrum::new(offset_grid, power)
}

fn lorentzian_initial(x: &[f64], y: &[f64]) -> [f64; 4] {
    let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let half = ymin + 0.5 * (ymax - ymin);
    let width = half_max_crossings(x, y, imax, half)
        .map(|(l, r)| r - l)
        .filter(|w| *w > 0.0)
        .unwrap_or_else(|| 0.25 * (x[x.len() - 1] - x[0]));
    [ymax - ymin, x[imax], width, ymin]
}

fn lorentzian_result(p: Vec<f64>, cov: &nalgebra::DMatrix<f64>, rms: f64, converged: bool, iterations: usize) -> FitResult {
    let mut params = p;
    params[2] = params[2].abs();
    let sigmas = (0..4).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    FitResult {
        names: ["A", "f0", "w", "b"].iter().map(|s| s.to_string()).collect(),
        params,
        sigmas,
        residual_norm: rms,
        converged,
        iterations,
    }
}

/// Least-squares Lorentzian with additive baseline; `init` = [A, f₀, w, b].
pub fn fit_lorentzian(spec: &BeatSpectrum, init: Option<[f64; 4]>) -> Result<FitResult> {
    let (x, y) = (&spec.offset_grid, &spec.power);
    if x.len() < 8 {
        return Err(Error::InsufficientPoints { needed: 8, found: x.len() });
    }
    if y.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateData("power must be finite and non-negative".into()));
    }
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    if ymax == ymin {
        return Err(Error::DegenerateData("constant power".into()));
    }
    // Fit in units of the data's own extent so rescaled inputs run identical iterations.
    let xs = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(x[x.len() - 1] - x[0]);
    let xn: Vec<f64> = x.iter().map(|v| v / xs).collect();
    let yn: Vec<f64> = y.iter().map(|v| v / ymax).collect();
    let p0 = match init {
        Some(p) => [p[0] / ymax, p[1] / xs, p[2] / xs, p[3] / ymax],
        None => lorentzian_initial(&xn, &yn),
    };
    let scales = [p0[0].abs(), p0[2].abs(), p0[2].abs(), p0[0].abs()];
    let out = levenberg_marquardt(&LorentzianModel, &xn, &yn, &p0, &scales, &TIGHT);
    let unit = [ymax, xs, xs, ymax];
    let params = out.params.iter().zip(&unit).map(|(p, u)| p * u).collect();
    let mut cov = out.covariance.clone();
    for i in 0..4 {
        for j in 0..4 {
            cov[(i, j)] *= unit[i] * unit[j];
        }
    }
    Ok(lorentzian_result(params, &cov, out.rms * ymax, out.converged, out.iterations))
}

const TIGHT: LmOptions = LmOptions { max_iter: 500, xtol: 1e-13, gtol: 1e-14 };

fn check_decay_points(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 4 {
        return Err(Error::InsufficientPoints { needed: 4, found: points.len() });
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::param("tau", "must be strictly increasing"));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::DegenerateData("non-finite point".into()));
    }
    Ok(())
}

fn decay_units(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let ts = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let ys = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    if !(ts > 0.0) || !(ys > 0.0) {
        return Err(Error::DegenerateData("all-zero decay data".into()));
    }
    Ok((ts, ys))
}

fn decay_initial(t: &[f64], y: &[f64]) -> [f64; 3] {
    let n = y.len();
    let span = t[n - 1] - t[0];
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = ymax - ymin;
    let falling = y[0] >= y[n - 1];
    let c = if falling { ymin - 0.05 * range } else { ymax + 0.05 * range };
    // Log-linear slope of |y − c| through the first point.
    let (mut sxx, mut sxy) = (0.0, 0.0);
    let l0 = (y[0] - c).abs().ln();
    for i in 1..n {
        let v = (y[i] - c).abs();
        if v > 0.0 {
            let dx = t[i] - t[0];
            sxx += dx * dx;
            sxy += dx * (v.ln() - l0);
        }
    }
    let mut k = -sxy / sxx;
    if !(k.is_finite() && k > 0.0) {
        k = 3.0 / span;
    }
    let a = (y[0] - c) * (k * t[0]).exp();
    [a, k, c]
}

/// f(τ) = A·e^{−τ/τ₀} + c with free asymptote; params `A`, `tau0`, `c`.
pub fn fit_exp_decay(points: &[(f64, f64)]) -> Result<FitResult> {
    check_decay_points(points)?;
    let (ts, ys) = decay_units(points)?;
    let t: Vec<f64> = points.iter().map(|p| p.0 / ts).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1 / ys).collect();
    let base = decay_initial(&t, &y);
    let span = t[t.len() - 1] - t[0];
    let yscale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut best: Option<LmOutcome> = None;
    for mult in [1.0, 3.0, 1.0 / 3.0] {
        let k = base[1] * mult;
        let a = (base[0] / (base[1] * t[0]).exp()) * (k * t[0]).exp();
        let p0 = [a, k, base[2]];
        let scales = [yscale, 1.0 / span, yscale];
        let out = levenberg_marquardt(&ExpDecayModel, &t, &y, &p0, &scales, &TIGHT);
        let better = match &best {
            None => true,
            Some(b) => (out.converged && !b.converged) || (out.converged == b.converged && out.cost < b.cost),
        };
        if better && out.params.iter().all(|v| v.is_finite()) {
            best = Some(out);
        }
    }
    let out = best.ok_or_else(|| Error::DegenerateData("exponential fit diverged".into()))?;
    let k = out.params[1];
    let sk = out.covariance[(1, 1)].max(0.0).sqrt();
    Ok(FitResult {
        names: ["A", "tau0", "c"].iter().map(|s| s.to_string()).collect(),
        params: vec![out.params[0] * ys, ts / k, out.params[2] * ys],
        sigmas: vec![
            out.covariance[(0, 0)].max(0.0).sqrt() * ys,
            ts * sk / (k * k),
            out.covariance[(2, 2)].max(0.0).sqrt() * ys,
        ],
        residual_norm: out.rms * ys,
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// Exponential decay with the asymptote held at `c`; params `A`, `tau0`.
pub fn fit_exp_decay_fixed_asymptote(points: &[(f64, f64)], c: f64) -> Result<FitResult> {
    check_decay_points(points)?;
    let (ts, ys) = decay_units(points)?;
    let t: Vec<f64> = points.iter().map(|p| p.0 / ts).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1 / ys).collect();
    let c = c / ys;
    let base = decay_initial(&t, &y);
    let span = t[t.len() - 1] - t[0];
    let yscale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let a0 = (y[0] - c) * (base[1] * t[0]).exp();
    let model = FixedAsymptoteModel { c };
    let out = levenberg_marquardt(&model, &t, &y, &[a0, base[1]], &[yscale, 1.0 / span], &TIGHT);
    let k = out.params[1];
    Ok(FitResult {
        names: vec!["A".into(), "tau0".into()],
        params: vec![out.params[0] * ys, ts / k],
        sigmas: vec![out.covariance[(0, 0)].max(0.0).sqrt() * ys, ts * out.covariance[(1, 1)].max(0.0).sqrt() / (k * k)],
        residual_norm: out.rms * ys,
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// Linear-interpolated half-level crossings left and right of `imax`.
fn half_max_crossings(x: &[f64], y: &[f64], imax: usize, half: f64) -> Option<(f64, f64)> {
    let cross = |i: usize, j: usize| {
        let t = (half - y[i]) / (y[j] - y[i]);
        x[i] + t * (x[j] - x[i])
    };
    let left = (1..=imax).rev().find(|&i| y[i - 1] < half).map(|i| cross(i - 1, i));
    let right = (imax..y.len() - 1).find(|&i| y[i + 1] < half).map(|i| cross(i, i + 1));
    match (left, right) {
        (Some(l), Some(r)) => Some((l, r)),
        (Some(l), None) => Some((l, 2.0 * x[imax] - l)),
        (None, Some(r)) => Some((2.0 * x[imax] - r, r)),
        (None, None) => None,
    }
}

/// Model-free FWHM by half-maximum interpolation.
pub fn half_max_width(spec: &BeatSpectrum) -> Result<f64> {
    let y = &spec.power;
    if y.len() < 3 {
        return Err(Error::InsufficientPoints { needed: 3, found: y.len() });
    }
    let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(ymax > ymin) {
        return Err(Error::NoPeak);
    }
    let x = &spec.offset_grid;
    let half = ymin + 0.5 * (ymax - ymin);
    let w0 = half_max_crossings(x, y, imax, half).map(|(l, r)| r - l).ok_or(Error::NoPeak)?;
    // The single highest bin of a noisy flat top overshoots the peak level;
    // a quadratic through the central ±0.15·FWHM averages it out.
    let top = peak_vertex(x, y, imax, 0.15 * w0).unwrap_or(ymax);
    let half = ymin + 0.5 * (top - ymin);
    let (l, r) = half_max_crossings(x, y, imax, half).ok_or(Error::NoPeak)?;
    // Likewise the first bin below half level sits early on a noisy flank.
    let l = refine_crossing(x, y, l, 0.15 * w0, half).unwrap_or(l);
    let r = refine_crossing(x, y, r, 0.15 * w0, half).unwrap_or(r);
    Ok(r - l)
}

/// Half-level crossing of a least-squares parabola through the points within
/// `radius` of a rough crossing `c`; `None` with fewer than 5 points or no root nearby.
fn refine_crossing(x: &[f64], y: &[f64], c: f64, radius: f64, half: f64) -> Option<f64> {
    let q = local_parabola(x, y, c, radius)?;
    let (a, b, cc) = (q[2], q[1], q[0] - half);
    let u = if a.abs() < 1e-12 * b.abs() {
        -cc / b
    } else {
        let disc = b * b - 4.0 * a * cc;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let (r1, r2) = ((-b + s) / (2.0 * a), (-b - s) / (2.0 * a));
        if r1.abs() < r2.abs() { r1 } else { r2 }
    };
    (u.is_finite() && u.abs() <= 1.0).then_some(c + u * radius)
}

/// Coefficients of y ≈ q₀ + q₁u + q₂u² with u = (x − x₀)/radius over |u| ≤ 1.
fn local_parabola(x: &[f64], y: &[f64], x0: f64, radius: f64) -> Option<nalgebra::DVector<f64>> {
    let idx: Vec<usize> = (0..x.len()).filter(|&i| (x[i] - x0).abs() <= radius).collect();
    if idx.len() < 5 {
        return None;
    }
    let a = nalgebra::DMatrix::from_fn(idx.len(), 3, |r, c| ((x[idx[r]] - x0) / radius).powi(c as i32));
    let b = nalgebra::DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i]));
    a.svd(true, true).solve(&b, 0.0).ok()
}

/// Vertex height of a least-squares parabola through the points within
/// `radius` of `x[imax]`; `None` with fewer than 5 points or no interior maximum.
fn peak_vertex(x: &[f64], y: &[f64], imax: usize, radius: f64) -> Option<f64> {
    let c = local_parabola(x, y, x[imax], radius)?;
    if c[2] >= 0.0 {
        return None;
    }
    let u = -c[1] / (2.0 * c[2]);
    if u.abs() > 1.0 {
        return None;
    }
    Some(c[0] + c[1] * u + c[2] * u * u)
}

/// FWHM of the beat: half-maximum interpolation, replaced by the Lorentzian
/// fit width when the two disagree by more than 20%.
pub fn extract_fwhm(spec: &BeatSpectrum) -> Result<f64> {
    let w = half_max_width(spec)?;
    let (imax, _) = spec.power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let f0 = spec.offset_grid[imax];
    // Fit over ±8 half-widths around the peak.
    let keep: Vec<usize> = (0..spec.power.len()).filter(|&i| (spec.offset_grid[i] - f0).abs() <= 8.0 * w).collect();
    if keep.len() < 8 {
        return Ok(w);
    }
    let local = BeatSpectrum {
        offset_grid: keep.iter().map(|&i| spec.offset_grid[i]).collect(),
        power: keep.iter().map(|&i| spec.power[i]).collect(),
    };
    match fit_lorentzian(&local, None) {
        Ok(fit) if fit.converged => {
            let wf = fit.params[2];
            if wf > 0.0 && ((w - wf) / wf).abs() > 0.2 {
                Ok(wf)
            } else {
                Ok(w)
            }
        }
        _ => Ok(w),
    }
}

/// Low-frequency dip depth in dB: mean power over `high` band relative to the
/// mean over `low` band, both on |offset|.
pub fn dip_depth_db(spec: &BeatSpectrum, low: (f64, f64), high: (f64, f64)) -> Result<f64> {
    let l = spec.band_mean(low.0, low.1).ok_or(Error::InsufficientPoints { needed: 1, found: 0 })?;
    let h = spec.band_mean(high.0, high.1).ok_or(Error::InsufficientPoints { needed: 1, found: 0 })?;
    if !(l > 0.0) || !(h > 0.0) {
        return Err(Error::DegenerateData("empty band in dip metric".into()));
    }
    Ok(10.0 * (h / l).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Model;
    use crate::oracle::{stream_rng, synth_from_psd, synth_phase_noise, wiener_phase_psd};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn lorentz_spec(a: f64, f0: f64, w: f64, b: f64, lo: f64, hi: f64, n: usize) -> BeatSpectrum {
        let x: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let mut g = [0.0; 4];
        let y = x.iter().map(|&f| LorentzianModel.eval(f, &[a, f0, w, b], &mut g)).collect();
        BeatSpectrum { offset_grid: x, power: y }
    }

    #[test]
    fn amplifier_edges() {
        let r = AmplifierResponse::default();
        let db = |f: f64| 20.0 * r.magnitude(f).log10();
        assert!(db(0.25e6) <= -20.0);
        assert!(db(200e6) <= -20.0);
        assert!(db(10e6) > -0.5);
    }

    #[test]
    fn amplifier_dip_on_flat_noise() {
        let fs = 250e6;
        let s = synth_phase_noise(3, 1e8, 1e-12, 1 << 17, fs).unwrap();
        let out = apply_amplifier(&s, &AmplifierResponse::default()).unwrap();
        let p = welch_psd(&out, 1 << 12, 0.5, Window::Hann).unwrap();
        let band = |lo: f64, hi: f64| {
            let v: Vec<f64> = p.freqs.iter().zip(&p.power).filter(|(f, _)| **f >= lo && **f <= hi).map(|x| *x.1).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(band(1e6, 9e7) / 1e-12 > 0.85);
        assert!(band(0.05e6, 0.2e6) / 1e-12 < 0.01);
        let zero = PhaseSeries::zeros(fs, 1024).unwrap();
        assert!(apply_amplifier(&zero, &AmplifierResponse::default()).unwrap().samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn white_noise_parseval() {
        let mut rng = stream_rng(8, 1);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let s = PhaseSeries::new(1e3, (0..1 << 16).map(|_| normal.sample(&mut rng)).collect()).unwrap();
        let p = welch_psd(&s, 256, 0.5, Window::Hann).unwrap();
        assert_relative_eq!(p.integral(), s.variance(), max_relative = 0.03);
        let flat = p.power[10..100].iter().sum::<f64>() / 90.0;
        assert_relative_eq!(flat, 4.0 / 500.0, max_relative = 0.05);
    }

    #[test]
    fn synth_round_trip_level() {
        let s = synth_phase_noise(17, 1e8, 2e-11, 1 << 17, 1e9).unwrap();
        let p = welch_psd(&s, 1 << 10, 0.5, Window::Hann).unwrap();
        let inband: Vec<f64> = p.freqs.iter().zip(&p.power).filter(|(f, _)| **f > 2e6 && **f < 9e7).map(|x| *x.1).collect();
        let mean = inband.iter().sum::<f64>() / inband.len() as f64;
        assert_relative_eq!(mean, 2e-11, max_relative = 0.1);
    }

    #[test]
    fn noise_free_beat_is_a_line() {
        let fs = 1e6;
        let z = PhaseSeries::zeros(fs, 1 << 14).unwrap();
        let cfg = WelchConfig::new(1 << 10);
        let b = beat_signal(&z, 2e5, &z, 1e5, &cfg).unwrap();
        let (imax, _) = b.power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert_eq!(b.offset_grid[imax], 0.0);
        let w = half_max_width(&b).unwrap();
        assert!(w <= 2.0 * b.resolution());
        let noise = synth_phase_noise(5, 4e5, 1e-6, 1 << 14, fs).unwrap();
        let common = beat_signal(&noise, 2e5, &noise, 1e5, &cfg).unwrap();
        for (p, q) in common.power.iter().zip(&b.power) {
            assert_relative_eq!(*p, *q, max_relative = 1e-6, epsilon = 1e-18);
        }
        assert!(matches!(beat_signal(&z, 6e5, &z, 0.0, &cfg), Err(Error::Nyquist { .. })));
    }

    #[test]
    fn laser_beat_width_is_sum_of_linewidths() {
        let fs = 32e6;
        let n = 1 << 17;
        let cfg = WelchConfig::new(1 << 13);
        let (l1, l2) = (0.3e6, 0.5e6);
        let spectra: Vec<BeatSpectrum> = (0..8)
            .map(|m| {
                let mut r1 = stream_rng(1, 2 * m);
                let mut r2 = stream_rng(1, 2 * m + 1);
                let a = PhaseSeries::new(fs, synth_from_psd(&mut r1, |f| wiener_phase_psd(l1, f), n, fs).unwrap()).unwrap();
                let b = PhaseSeries::new(fs, synth_from_psd(&mut r2, |f| wiener_phase_psd(l2, f), n, fs).unwrap()).unwrap();
                beat_signal(&a, 0.0, &b, 0.0, &cfg).unwrap()
            })
            .collect();
        let mean = BeatSpectrum::mean(&spectra).unwrap();
        let w = fit_lorentzian(&mean, None).unwrap().params[2];
        assert!((w / (l1 + l2) - 1.0).abs() < 0.1, "{w}");
    }

    #[test]
    fn expected_beat_matches_lorentzian() {
        let fs = 32e6;
        let n = 1 << 17;
        let cfg = WelchConfig::new(1 << 13);
        let psd: Vec<f64> = dsp::rfft_freqs(n, fs).iter().map(|&f| wiener_phase_psd(0.8e6, f)).collect();
        let b = expected_beat_spectrum(&psd, n, fs, &cfg).unwrap();
        let w = extract_fwhm(&b).unwrap();
        assert!((w / 0.8e6 - 1.0).abs() < 0.03, "{w}");
    }

    #[test]
    fn lorentzian_exact_recovery() {
        let s = lorentz_spec(2.0, 0.1e6, 1e6, 0.0, -5e6, 5e6, 401);
        let f = fit_lorentzian(&s, None).unwrap();
        assert!(f.converged);
        assert_relative_eq!(f.get("A").unwrap(), 2.0, max_relative = 1e-6);
        assert_relative_eq!(f.get("f0").unwrap(), 0.1e6, max_relative = 1e-6);
        assert_relative_eq!(f.get("w").unwrap(), 1e6, max_relative = 1e-6);
    }

    #[test]
    fn lorentzian_constant_is_degenerate() {
        let s = BeatSpectrum { offset_grid: (0..10).map(|i| i as f64).collect(), power: vec![1.0; 10] };
        assert!(matches!(fit_lorentzian(&s, None), Err(Error::DegenerateData(_))));
        let short = BeatSpectrum { offset_grid: vec![0.0; 5], power: vec![1.0; 5] };
        assert!(matches!(fit_lorentzian(&short, None), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn exp_exact_recovery() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| {
            let t = 0.5 + 0.5 * i as f64;
            (t, 3.0 * (-t / 2.0).exp() + 0.3)
        }).collect();
        let f = fit_exp_decay(&pts).unwrap();
        assert!(f.converged);
        assert_relative_eq!(f.get("A").unwrap(), 3.0, max_relative = 1e-6);
        assert_relative_eq!(f.get("tau0").unwrap(), 2.0, max_relative = 1e-6);
        assert_relative_eq!(f.get("c").unwrap(), 0.3, max_relative = 1e-6);
        let fixed = fit_exp_decay_fixed_asymptote(&pts, 0.3).unwrap();
        assert_relative_eq!(fixed.get("tau0").unwrap(), 2.0, max_relative = 1e-6);
    }

    #[test]
    fn exp_input_checks() {
        assert!(matches!(fit_exp_decay(&[(0.0, 1.0), (1.0, 0.5), (2.0, 0.3)]), Err(Error::InsufficientPoints { .. })));
        assert!(fit_exp_decay(&[(0.0, 1.0), (2.0, 0.5), (1.0, 0.3), (3.0, 0.2)]).is_err());
    }

    #[test]
    fn fwhm_of_exact_lorentzian() {
        let s = lorentz_spec(1.0, 0.0, 1e6, 0.0, -20e6, 20e6, 4001);
        assert!((extract_fwhm(&s).unwrap() - 1e6).abs() <= s.resolution());
    }

    #[test]
    fn fwhm_asymmetric_peak_bounded() {
        let x: Vec<f64> = (0..2001).map(|i| -10.0 + 0.01 * i as f64).collect();
        let (wl, wr) = (1.0, 3.0);
        let y: Vec<f64> = x.iter().map(|&f| {
            let h = if f < 0.0 { wl / 2.0 } else { wr / 2.0 };
            h * h / (f * f + h * h)
        }).collect();
        let w = half_max_width(&BeatSpectrum { offset_grid: x, power: y }).unwrap();
        assert!(w >= wl - 0.02 && w <= wr + 0.02);
    }

    #[test]
    fn fwhm_no_peak() {
        let s = BeatSpectrum { offset_grid: vec![0.0, 1.0, 2.0], power: vec![1.0; 3] };
        assert!(matches!(extract_fwhm(&s), Err(Error::NoPeak)));
    }

    #[test]
    fn fwhm_of_fitted_model_reproduces_width() {
        let base = lorentz_spec(1.0, 0.0, 1e6, 0.02, -5e6, 5e6, 501);
        let fit = fit_lorentzian(&base, None).unwrap();
        let mut g = [0.0; 4];
        let model = BeatSpectrum {
            power: base.offset_grid.iter().map(|&f| LorentzianModel.eval(f, &fit.params, &mut g)).collect(),
            ..base.clone()
        };
        assert!((extract_fwhm(&model).unwrap() - fit.params[2]).abs() <= base.resolution());
    }

    proptest! {
        #[test]
        fn lorentzian_scale_equivariant(s in prop::sample::select(vec![0.5, 2.0, 3.0, 7.0]), w in 0.5..2.0f64) {
            let x0 = lorentz_spec(1.0, 0.1, w, 0.05, -6.0, 6.0, 241);
            let mut x1 = x0.clone();
            x1.power.iter_mut().for_each(|p| {
                let noise = (*p * 1e3).sin() * 0.01;
                *p += noise;
            });
            let mut xs = x1.clone();
            xs.power.iter_mut().for_each(|p| *p *= s);
            xs.offset_grid.iter_mut().for_each(|f| *f *= s);
            let a = fit_lorentzian(&x1, None).unwrap();
            let b = fit_lorentzian(&xs, None).unwrap();
            for k in 0..4 {
                prop_assert!((b.params[k] - s * a.params[k]).abs() <= 1e-10 * (s * a.params[k]).abs().max(1e-300) + 1e-13, "{k} {:?} {:?} {} {}", a.params, b.params, a.converged, b.converged);
            }
        }

        #[test]
        fn exp_scale_equivariant(s in prop::sample::select(vec![0.5, 2.0, 3.0]), tau0 in 1.0..4.0f64) {
            let pts: Vec<(f64, f64)> = (0..15).map(|i| {
                let t = 0.5 + 0.6 * i as f64;
                (t, 2.0 * (-t / tau0).exp() + 0.4 + 0.01 * (7.0 * t).sin())
            }).collect();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|(t, y)| (t * s, y * s)).collect();
            let a = fit_exp_decay(&pts).unwrap();
            let b = fit_exp_decay(&scaled).unwrap();
            for k in 0..3 {
                prop_assert!((b.params[k] - s * a.params[k]).abs() <= 1e-10 * (s * a.params[k]).abs(), "{k} {:?} {:?} {} {}", a.params, b.params, a.converged, b.converged);
            }
        }

        #[test]
        fn welch_parseval(seed in 0u64..1000, amp in 0.1..10.0f64) {
            let mut rng = stream_rng(seed, 3);
            let normal = Normal::new(0.0, amp).unwrap();
            let s = PhaseSeries::new(1.0, (0..1 << 14).map(|_| normal.sample(&mut rng)).collect()).unwrap();
            let p = welch_psd(&s, 512, 0.5, Window::Hann).unwrap();
            prop_assert!((p.integral() / s.variance() - 1.0).abs() < 0.03);
        }
    }
}
