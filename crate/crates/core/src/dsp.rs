//! FFT plumbing, tapers and Welch estimators shared by the oracle and the
//! analysis chain.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic taper of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| {
                    let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
                    s * s
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: Window,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self { segment_len: 1 << 12, overlap: 0.5, window: Window::Hann }
    }
}

impl WelchConfig {
    pub fn new(segment_len: usize) -> Self {
        Self { segment_len, ..Self::default() }
    }

    fn hop(&self) -> usize {
        ((self.segment_len as f64) * (1.0 - self.overlap)).round().max(1.0) as usize
    }

    /// Segment start offsets for a series of length `len`.
    pub fn segment_starts(&self, len: usize) -> Result<Vec<usize>> {
        if !self.segment_len.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.segment_len));
        }
        if self.segment_len > len {
            return Err(Error::SegmentTooLong { segment_len: self.segment_len, len });
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::param("overlap", "must be in [0, 1)"));
        }
        let hop = self.hop();
        Ok((0..=(len - self.segment_len) / hop).map(|k| k * hop).collect())
    }
}

pub fn forward(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(n)
}

pub fn inverse(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_inverse(n)
}

/// Forward DFT of a real series.
pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward(buf.len()).process(&mut buf);
    buf
}

/// Non-negative FFT bin frequencies 0, fs/n, …, fs/2 (n/2 + 1 values).
pub fn rfft_freqs(n: usize, sample_rate: f64) -> Vec<f64> {
    (0..=n / 2).map(|k| k as f64 * sample_rate / n as f64).collect()
}

/// Windowed segment spectra, one vector of `segment_len` bins per segment.
fn segment_spectra(
    x: &[Complex64],
    cfg: &WelchConfig,
    fft: &Arc<dyn Fft<f64>>,
    w: &[f64],
) -> Result<Vec<Vec<Complex64>>> {
    let starts = cfg.segment_starts(x.len())?;
    Ok(starts
        .iter()
        .map(|&s| {
            let mut buf: Vec<Complex64> =
                x[s..s + cfg.segment_len].iter().zip(w).map(|(v, w)| v * w).collect();
            fft.process(&mut buf);
            buf
        })
        .collect())
}

fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// One-sided Welch cross-spectral density E[X Y*] of two real series.
///
/// Returns (frequencies, spectrum) with `segment_len/2 + 1` bins; interior
/// bins carry the one-sided factor 2.
pub fn welch_cross(
    x: &[f64],
    y: &[f64],
    sample_rate: f64,
    cfg: &WelchConfig,
) -> Result<(Vec<f64>, Vec<Complex64>)> {
    if x.len() != y.len() {
        return Err(Error::SeriesMismatch(format!("lengths {} and {}", x.len(), y.len())));
    }
    let l = cfg.segment_len;
    let w = cfg.window.coefficients(l);
    let u: f64 = w.iter().map(|v| v * v).sum();
    let fft = forward(l);
    let sx = segment_spectra(&to_complex(x), cfg, &fft, &w)?;
    let sy = if std::ptr::eq(x, y) { sx.clone() } else { segment_spectra(&to_complex(y), cfg, &fft, &w)? };
    let half = l / 2;
    let mut acc = vec![Complex64::new(0.0, 0.0); half + 1];
    for (a, b) in sx.iter().zip(&sy) {
        for k in 0..=half {
            acc[k] += a[k] * b[k].conj();
        }
    }
    let norm = 1.0 / (sx.len() as f64 * sample_rate * u);
    for (k, v) in acc.iter_mut().enumerate() {
        let side = if k == 0 || k == half { 1.0 } else { 2.0 };
        *v *= side * norm;
    }
    Ok((rfft_freqs(l, sample_rate), acc))
}

/// One-sided Welch PSD of a real series.
pub fn welch_real(x: &[f64], sample_rate: f64, cfg: &WelchConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let (f, c) = welch_cross(x, x, sample_rate, cfg)?;
    Ok((f, c.into_iter().map(|v| v.re).collect()))
}

/// Two-sided Welch PSD of a complex series on the symmetric offset grid
/// −(L/2−1)·fs/L … (L/2−1)·fs/L.
pub fn welch_complex(z: &[Complex64], sample_rate: f64, cfg: &WelchConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = cfg.segment_len;
    let w = cfg.window.coefficients(l);
    let u: f64 = w.iter().map(|v| v * v).sum();
    let fft = forward(l);
    let spectra = segment_spectra(z, cfg, &fft, &w)?;
    let mut acc = vec![0.0; l];
    for s in &spectra {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v.norm_sqr();
        }
    }
    let norm = 1.0 / (spectra.len() as f64 * sample_rate * u);
    Ok(symmetric_from_fft_order(&acc, sample_rate, norm))
}

/// Reorders FFT-ordered bins onto the symmetric grid, dropping the −fs/2 bin.
fn symmetric_from_fft_order(bins: &[f64], sample_rate: f64, norm: f64) -> (Vec<f64>, Vec<f64>) {
    let l = bins.len();
    let half = l as isize / 2;
    let mut freqs = Vec::with_capacity(l - 1);
    let mut power = Vec::with_capacity(l - 1);
    for j in -(half - 1)..half {
        let idx = j.rem_euclid(l as isize) as usize;
        freqs.push(j as f64 * sample_rate / l as f64);
        power.push(bins[idx] * norm);
    }
    (freqs, power)
}

/// Exact expectation of [`welch_complex`] for a stationary complex process
/// with autocorrelation `r(m) = E[z(t+m) z*(t)]`, given for lags
/// 0 ≤ m < segment_len (the process is assumed to satisfy r(−m) = r(m)*).
pub fn expected_welch_complex(r: &[Complex64], sample_rate: f64, cfg: &WelchConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = cfg.segment_len;
    if !l.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(l));
    }
    if r.len() < l {
        return Err(Error::InsufficientPoints { needed: l, found: r.len() });
    }
    let w = cfg.window.coefficients(l);
    let u: f64 = w.iter().map(|v| v * v).sum();
    // Lag window a(m) = Σ_n w_n w_{n+m}, then the periodogram expectation is
    // Σ_m r(m) a(m) e^{−2πi j m / L} over |m| < L.
    let n2 = 2 * l;
    let mut buf = vec![Complex64::new(0.0, 0.0); n2];
    for (m, a) in lag_window(&w).into_iter().enumerate() {
        buf[m] = r[m] * a;
        if m > 0 {
            buf[n2 - m] = r[m].conj() * a;
        }
    }
    forward(n2).process(&mut buf);
    // Bin j on the L-grid is bin 2j on the 2L-grid.
    let bins: Vec<f64> = (0..l).map(|j| buf[2 * j].re.max(0.0)).collect();
    Ok(symmetric_from_fft_order(&bins, sample_rate, 1.0 / (sample_rate * u)))
}

/// Lag-window autocorrelation a(m) = Σ_n w_n w_{n+m} of a taper.
pub fn lag_window(w: &[f64]) -> Vec<f64> {
    let l = w.len();
    (0..l).map(|m| (0..l - m).map(|n| w[n] * w[n + m]).sum()).collect()
}

/// Autocovariance C(n) = Σ_k S_k Δf cos(2πkn/N) of a periodic real process of
/// length `n` with one-sided PSD `psd` given on the FFT bins 0..=n/2.
pub fn autocovariance_from_psd(psd: &[f64], n: usize, sample_rate: f64) -> Result<Vec<f64>> {
    if psd.len() != n / 2 + 1 {
        return Err(Error::GridMismatch { expected: n / 2 + 1, found: psd.len() });
    }
    let df = sample_rate / n as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    // Interior bins split the one-sided power evenly between ±f.
    for k in 1..n / 2 {
        let v = 0.5 * psd[k] * df;
        buf[k] = Complex64::new(v, 0.0);
        buf[n - k] = Complex64::new(v, 0.0);
    }
    inverse(n).process(&mut buf);
    Ok(buf.into_iter().map(|c| c.re).collect())
}

/// Beat-note autocorrelation exp(−(σ² − C(m))) of e^{iψ} for a Gaussian
/// relative phase ψ with one-sided PSD `psd` on the FFT bins.
pub fn beat_autocorrelation(psd: &[f64], n: usize, sample_rate: f64) -> Result<Vec<Complex64>> {
    let c = autocovariance_from_psd(psd, n, sample_rate)?;
    let var = c[0];
    Ok(c.iter().map(|&v| Complex64::new((v - var).exp(), 0.0)).collect())
}

/// Stable pairwise sum.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}
