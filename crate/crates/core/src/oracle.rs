//! Monte Carlo route to the noise spectra: spectral synthesis of phase noise,
//! per-Fourier-component field mixing and ensemble spectral estimation.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{forward, inverse, rfft_freqs, welch_cross, WelchConfig};
use crate::model::{hz, rad, Scheme};
use crate::par::{try_map_range, Exec};
use crate::propagation::{PathAccumulator, SpectrumSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSeries {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl PhaseSeries {
    pub fn new(sample_rate: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::param("sample_rate", "must be > 0"));
        }
        if !samples.len().is_power_of_two() {
            return Err(Error::NotPowerOfTwo(samples.len()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite phase sample".into()));
        }
        Ok(Self { sample_rate, samples })
    }

    pub fn zeros(sample_rate: f64, n: usize) -> Result<Self> {
        Self::new(sample_rate, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn nyquist(&self) -> f64 {
        0.5 * self.sample_rate
    }

    pub fn variance(&self) -> f64 {
        let n = self.len() as f64;
        let m = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
    }
}

/// `members[m][c]` is the phase series of field component `c` in member `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEnsemble {
    pub sample_rate: f64,
    pub seed: u64,
    pub component_carriers: Vec<f64>,
    pub members: Vec<Vec<Vec<f64>>>,
}

impl PhaseEnsemble {
    pub fn new(sample_rate: f64, seed: u64, component_carriers: Vec<f64>, members: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::TooFewMembers { found: members.len() });
        }
        let comps = component_carriers.len();
        let n = members[0].first().map_or(0, Vec::len);
        if !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        for m in &members {
            if m.len() != comps {
                return Err(Error::DimensionMismatch { expected: comps, found: m.len() });
            }
            if m.iter().any(|s| s.len() != n) {
                return Err(Error::SeriesMismatch("members differ in length".into()));
            }
        }
        Ok(Self { sample_rate, seed, component_carriers, members })
    }

    pub fn components(&self) -> usize {
        self.component_carriers.len()
    }

    pub fn n_samples(&self) -> usize {
        self.members[0][0].len()
    }

    pub fn series(&self, member: usize, component: usize) -> PhaseSeries {
        PhaseSeries { sample_rate: self.sample_rate, samples: self.members[member][component].clone() }
    }
}

/// SplitMix64 finalizer, used to derive RNG stream ids.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id for a tuple of counters.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_0000_0000_0001u64, |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Counter-based generator: the master seed selects the key, `stream` the
/// independent sequence. The same (seed, stream) always yields the same draws.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a real series of length `n` whose one-sided PSD is `psd(f)` on the
/// FFT bins 0 < f < fs/2. Bin coefficients are circular complex Gaussian.
pub fn synth_from_psd<R: Rng, F: Fn(f64) -> f64>(rng: &mut R, psd: F, n: usize, sample_rate: f64) -> Result<Vec<f64>> {
    if !n.is_power_of_two() || n < 2 {
        return Err(Error::NotPowerOfTwo(n));
    }
    let df = sample_rate / n as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    // E|X_k|² = N·fs·S/2 for interior bins of the unnormalized DFT.
    let scale = (n as f64 * sample_rate * 0.5).sqrt();
    for k in 1..n / 2 {
        let s = psd(k as f64 * df);
        let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        if s > 0.0 {
            let a = scale * s.sqrt() * std::f64::consts::FRAC_1_SQRT_2;
            buf[k] = Complex64::new(a * re, a * im);
            buf[n - k] = buf[k].conj();
        }
    }
    inverse(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    Ok(buf.into_iter().map(|c| c.re * inv).collect())
}

/// Band-limited white phase noise: one-sided PSD `noise_level` below
/// `band_limit`, zero above.
pub fn synth_phase_noise(seed: u64, band_limit: f64, noise_level: f64, n_samples: usize, sample_rate: f64) -> Result<PhaseSeries> {
    let mut rng = stream_rng(seed, 0);
    synth_phase_noise_with(&mut rng, band_limit, noise_level, n_samples, sample_rate)
}

pub fn synth_phase_noise_with<R: Rng>(
    rng: &mut R,
    band_limit: f64,
    noise_level: f64,
    n_samples: usize,
    sample_rate: f64,
) -> Result<PhaseSeries> {
    let nyquist = 0.5 * sample_rate;
    if band_limit > nyquist {
        return Err(Error::Aliasing { band_limit, nyquist });
    }
    if !(noise_level >= 0.0) {
        return Err(Error::param("noise_level", "must be >= 0"));
    }
    let s = synth_from_psd(rng, |f| if f < band_limit { noise_level } else { 0.0 }, n_samples, sample_rate)?;
    PhaseSeries::new(sample_rate, s)
}

/// One-sided phase PSD of a free-running laser with Lorentzian FWHM `linewidth` [Hz].
pub fn wiener_phase_psd(linewidth: f64, f: f64) -> f64 {
    if f == 0.0 {
        0.0
    } else {
        linewidth / (PI * f * f)
    }
}

/// Phase-noise source for one field component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSource {
    Silent,
    /// Band-limited white phase noise (band edge Hz, level rad²/Hz).
    Flat { band_limit: f64, level: f64 },
    /// Free-running laser phase walk with Lorentzian FWHM [Hz].
    Laser { linewidth: f64 },
}

impl NoiseSource {
    pub fn psd(&self, f: f64) -> f64 {
        match *self {
            NoiseSource::Silent => 0.0,
            NoiseSource::Flat { band_limit, level } => {
                if f > 0.0 && f < band_limit {
                    level
                } else {
                    0.0
                }
            }
            NoiseSource::Laser { linewidth } => wiener_phase_psd(linewidth, f),
        }
    }
}

/// Ensemble with independent sources per component. `stream_base` keys the
/// RNG streams (member m, component c use stream_id([base, m, c])).
pub fn synth_ensemble(
    seed: u64,
    stream_base: u64,
    n_members: usize,
    n_samples: usize,
    sample_rate: f64,
    sources: &[NoiseSource],
    carriers: Vec<f64>,
    exec: Exec,
) -> Result<PhaseEnsemble> {
    if carriers.len() != sources.len() {
        return Err(Error::DimensionMismatch { expected: sources.len(), found: carriers.len() });
    }
    for s in sources {
        if let NoiseSource::Flat { band_limit, .. } = s {
            if *band_limit > 0.5 * sample_rate {
                return Err(Error::Aliasing { band_limit: *band_limit, nyquist: 0.5 * sample_rate });
            }
        }
    }
    let members = try_map_range(exec, n_members, |m| {
        sources
            .iter()
            .enumerate()
            .map(|(c, src)| {
                let mut rng = stream_rng(seed, stream_id(&[stream_base, m as u64, c as u64]));
                synth_from_psd(&mut rng, |f| src.psd(f), n_samples, sample_rate)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    PhaseEnsemble::new(sample_rate, seed, carriers, members)
}

/// Per-frequency field mixing; `coeffs[k]` is the row-major `dim × dim`
/// matrix at the non-negative FFT frequency `freqs_hz[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    pub dim: usize,
    pub freqs_hz: Vec<f64>,
    pub coeffs: Vec<Vec<Complex64>>,
}

fn outer_sum(dim: usize, modes: &[(&[f64], Complex64)]) -> Vec<Complex64> {
    let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
    for (v, g) in modes {
        for i in 0..dim {
            for j in 0..dim {
                m[i * dim + j] += g * (v[i] * v[j]);
            }
        }
    }
    m
}

const SUM2: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
const DIFF2: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
const COMMON4: [f64; 4] = [0.5, 0.5, 0.5, 0.5];
const RAMAN4: [f64; 4] = [0.5, -0.5, 0.5, -0.5];
const CROSS4: [f64; 4] = [0.5, 0.5, -0.5, -0.5];
const LOOP4: [f64; 4] = [0.5, -0.5, -0.5, 0.5];

impl MixingMatrix {
    pub fn identity(dim: usize, freqs_hz: Vec<f64>) -> Self {
        let mut eye = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        let coeffs = vec![eye; freqs_hz.len()];
        Self { dim, freqs_hz, coeffs }
    }

    pub fn at(&self, k: usize, i: usize, j: usize) -> Complex64 {
        self.coeffs[k][i * self.dim + j]
    }

    /// Built from a propagated path on an FFT-bin grid (`acc.omega_grid` in rad/s).
    pub fn from_path(acc: &PathAccumulator) -> Self {
        let freqs: Vec<f64> = acc.omega_grid.iter().map(|&w| hz(w)).collect();
        match acc.drive.scheme {
            Scheme::Lambda => build_lambda_mixing_with_phase(freqs, &acc.x, None),
            Scheme::DoubleLambda => build_double_mixing(freqs, &acc.x, &acc.x_loop),
        }
    }

    /// Output cross-spectrum W_ij for independent inputs with auto-spectra
    /// `auto[c][k]`: Σ_c M_ic W_cc M_jc*.
    pub fn output_cross(&self, auto: &[Vec<f64>], i: usize, j: usize) -> Result<Vec<Complex64>> {
        if auto.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: auto.len() });
        }
        let n = self.freqs_hz.len();
        if auto.iter().any(|a| a.len() != n) {
            return Err(Error::GridMismatch { expected: n, found: auto[0].len() });
        }
        Ok((0..n)
            .map(|k| (0..self.dim).map(|c| self.at(k, i, c) * self.at(k, j, c).conj() * auto[c][k]).sum())
            .collect())
    }

    /// Two-field spectrum set for components (i, j) given independent inputs.
    pub fn output_spectra(&self, auto: &[Vec<f64>], i: usize, j: usize) -> Result<SpectrumSet> {
        let wii = self.output_cross(auto, i, i)?;
        let wjj = self.output_cross(auto, j, j)?;
        let wij = self.output_cross(auto, i, j)?;
        SpectrumSet::new(
            self.freqs_hz.iter().map(|&f| rad(f)).collect(),
            wii.iter().map(|c| c.re).collect(),
            wjj.iter().map(|c| c.re).collect(),
            wij.iter().map(|c| c.re).collect(),
            wij.iter().map(|c| c.im).collect(),
        )
    }

    /// Spectrum of the relative phase φ_i − φ_j for independent inputs.
    pub fn output_relative(&self, auto: &[Vec<f64>], i: usize, j: usize) -> Result<Vec<f64>> {
        let wii = self.output_cross(auto, i, i)?;
        let wjj = self.output_cross(auto, j, j)?;
        let wij = self.output_cross(auto, i, j)?;
        Ok((0..wii.len()).map(|k| (wii[k].re + wjj[k].re - 2.0 * wij[k].re).max(0.0)).collect())
    }
}

/// Λ: sum channel kept, difference channel scaled by e^{−x}; double-Λ with a
/// single path: every non-common channel scaled by e^{−x}.
pub fn build_mixing(freqs_hz: Vec<f64>, x: &[f64], scheme: Scheme) -> MixingMatrix {
    match scheme {
        Scheme::Lambda => build_lambda_mixing_with_phase(freqs_hz, x, None),
        Scheme::DoubleLambda => build_double_mixing(freqs_hz, x, x),
    }
}

/// Λ mixing with an optional phase θ(ω) on the difference channel.
pub fn build_lambda_mixing_with_phase(freqs_hz: Vec<f64>, x: &[f64], theta: Option<&[f64]>) -> MixingMatrix {
    let coeffs = (0..freqs_hz.len())
        .map(|k| {
            let th = theta.map_or(0.0, |t| t[k]);
            let g = Complex64::from_polar((-x[k]).exp(), th);
            outer_sum(2, &[(&SUM2, Complex64::new(1.0, 0.0)), (&DIFF2, g)])
        })
        .collect();
    MixingMatrix { dim: 2, freqs_hz, coeffs }
}

/// θ(ω) = arg(ReW₁₂ + i ImW₁₂) of a target spectrum set.
pub fn match_phase(target: &SpectrumSet) -> Vec<f64> {
    target.re_w12.iter().zip(&target.im_w12).map(|(r, i)| i.atan2(*r)).collect()
}

/// Double-Λ mixing: common mode kept, the Raman-sum and cross-pair channels
/// scaled by e^{−x}, the loop channel by e^{−x_loop}.
pub fn build_double_mixing(freqs_hz: Vec<f64>, x: &[f64], x_loop: &[f64]) -> MixingMatrix {
    let one = Complex64::new(1.0, 0.0);
    let coeffs = (0..freqs_hz.len())
        .map(|k| {
            let g = one * (-x[k]).exp();
            let gl = one * (-x_loop[k]).exp();
            outer_sum(4, &[(&COMMON4, one), (&RAMAN4, g), (&CROSS4, g), (&LOOP4, gl)])
        })
        .collect();
    MixingMatrix { dim: 4, freqs_hz, coeffs }
}

/// FFT-bin grid (rad/s) for series of length `n`.
pub fn fft_omega_grid(n: usize, sample_rate: f64) -> Vec<f64> {
    rfft_freqs(n, sample_rate).into_iter().map(rad).collect()
}

/// Applies `m` to one member; returns the mixed series and the largest
/// imaginary residue relative to the output RMS.
pub fn mix_member(member: &[Vec<f64>], m: &MixingMatrix) -> Result<(Vec<Vec<f64>>, f64)> {
    let dim = m.dim;
    if member.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: member.len() });
    }
    let n = member[0].len();
    if m.freqs_hz.len() != n / 2 + 1 {
        return Err(Error::GridMismatch { expected: n / 2 + 1, found: m.freqs_hz.len() });
    }
    let fwd = forward(n);
    let spectra: Vec<Vec<Complex64>> = member
        .iter()
        .map(|s| {
            let mut b: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fwd.process(&mut b);
            b
        })
        .collect();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); n]; dim];
    let half = n / 2;
    for k in 0..n {
        let (kk, conj) = if k <= half { (k, false) } else { (n - k, true) };
        let mat = &m.coeffs[kk];
        for i in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..dim {
                let mut a = mat[i * dim + c];
                if conj {
                    a = a.conj();
                } else if k == half || k == 0 {
                    a = Complex64::new(a.re, 0.0);
                }
                acc += a * spectra[c][k];
            }
            out[i][k] = acc;
        }
    }
    let inv = inverse(n);
    let scale = 1.0 / n as f64;
    let mut leak: f64 = 0.0;
    let mixed = out
        .into_iter()
        .map(|mut b| {
            inv.process(&mut b);
            let rms = (b.iter().map(|c| (c.re * scale).powi(2)).sum::<f64>() / n as f64).sqrt();
            let im = b.iter().map(|c| (c.im * scale).abs()).fold(0.0, f64::max);
            if rms > 0.0 {
                leak = leak.max(im / rms);
            }
            b.into_iter().map(|c| c.re * scale).collect()
        })
        .collect();
    Ok((mixed, leak))
}

/// Mixes every member of `ens` by `m`.
pub fn apply_mixing(ens: &PhaseEnsemble, m: &MixingMatrix, exec: Exec) -> Result<PhaseEnsemble> {
    if ens.components() != m.dim {
        return Err(Error::DimensionMismatch { expected: m.dim, found: ens.components() });
    }
    let members = try_map_range(exec, ens.members.len(), |i| mix_member(&ens.members[i], m).map(|r| r.0))?;
    Ok(PhaseEnsemble { members, ..ens.clone() })
}

/// Largest relative imaginary leakage over the ensemble.
pub fn mixing_leakage(ens: &PhaseEnsemble, m: &MixingMatrix, exec: Exec) -> Result<f64> {
    let l = try_map_range(exec, ens.members.len(), |i| mix_member(&ens.members[i], m).map(|r| r.1))?;
    Ok(l.into_iter().fold(0.0, f64::max))
}

/// Ensemble-mean spectrum set and its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub mean: SpectrumSet,
    pub stderr: SpectrumSet,
    pub members: usize,
}

/// Per-member Welch auto/cross spectra of components (i, j), averaged over
/// the ensemble.
pub fn estimate_spectrum_set_with_errors(
    ens: &PhaseEnsemble,
    i: usize,
    j: usize,
    welch: &WelchConfig,
    exec: Exec,
) -> Result<SpectrumEstimate> {
    let m = ens.members.len();
    if m < 2 {
        return Err(Error::TooFewMembers { found: m });
    }
    if i >= ens.components() || j >= ens.components() {
        return Err(Error::DimensionMismatch { expected: ens.components(), found: i.max(j) + 1 });
    }
    let fs = ens.sample_rate;
    let per: Vec<(Vec<f64>, [Vec<f64>; 4])> = try_map_range(exec, m, |k| {
        let a = &ens.members[k][i];
        let b = &ens.members[k][j];
        let (f, aa) = welch_cross(a, a, fs, welch)?;
        let (_, bb) = welch_cross(b, b, fs, welch)?;
        let (_, ab) = welch_cross(a, b, fs, welch)?;
        Ok::<_, Error>((
            f,
            [
                aa.iter().map(|c| c.re).collect(),
                bb.iter().map(|c| c.re).collect(),
                ab.iter().map(|c| c.re).collect(),
                ab.iter().map(|c| c.im).collect(),
            ],
        ))
    })?;
    let bins = per[0].0.len();
    let mut mean = [vec![0.0; bins], vec![0.0; bins], vec![0.0; bins], vec![0.0; bins]];
    let mut se = mean.clone();
    for q in 0..4 {
        for k in 0..bins {
            let mu = per.iter().map(|p| p.1[q][k]).sum::<f64>() / m as f64;
            let var = per.iter().map(|p| (p.1[q][k] - mu).powi(2)).sum::<f64>() / (m as f64 - 1.0);
            mean[q][k] = mu;
            se[q][k] = (var / m as f64).sqrt();
        }
    }
    let grid: Vec<f64> = per[0].0.iter().map(|&f| rad(f)).collect();
    let [a, b, c, d] = mean;
    let [sa, sb, sc, sd] = se;
    Ok(SpectrumEstimate {
        mean: SpectrumSet::new(grid.clone(), a, b, c, d)?,
        stderr: SpectrumSet::new(grid, sa, sb, sc, sd)?,
        members: m,
    })
}

/// Ensemble-averaged W₁₁, W₂₂, W₁₂ for components 0 and 1.
pub fn estimate_spectrum_set(ens: &PhaseEnsemble, welch: &WelchConfig, exec: Exec) -> Result<SpectrumSet> {
    Ok(estimate_spectrum_set_with_errors(ens, 0, 1, welch, exec)?.mean)
}

const MAGIC: &[u8; 8] = b"EITPHASE";
const VERSION: u32 = 1;

/// Raw dump: 64-byte little-endian header (magic, version, components,
/// members, samples, sample_rate, seed, zero padding), the component carriers
/// as f64, then samples ordered member, component, time.
pub fn write_ensemble<W: Write>(ens: &PhaseEnsemble, mut w: W) -> Result<()> {
    let mut h = [0u8; 64];
    h[0..8].copy_from_slice(MAGIC);
    h[8..12].copy_from_slice(&VERSION.to_le_bytes());
    h[12..16].copy_from_slice(&(ens.components() as u32).to_le_bytes());
    h[16..24].copy_from_slice(&(ens.members.len() as u64).to_le_bytes());
    h[24..32].copy_from_slice(&(ens.n_samples() as u64).to_le_bytes());
    h[32..40].copy_from_slice(&ens.sample_rate.to_le_bytes());
    h[40..48].copy_from_slice(&ens.seed.to_le_bytes());
    w.write_all(&h)?;
    for c in &ens.component_carriers {
        w.write_all(&c.to_le_bytes())?;
    }
    for m in &ens.members {
        for s in m {
            for v in s {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_ensemble<R: Read>(mut r: R) -> Result<PhaseEnsemble> {
    let mut h = [0u8; 64];
    r.read_exact(&mut h)?;
    if &h[0..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(Error::Format(format!("unsupported version {}", u32_at(8))));
    }
    let comps = u32_at(12) as usize;
    let members = u64_at(16) as usize;
    let n = u64_at(24) as usize;
    let fs = f64::from_le_bytes(h[32..40].try_into().unwrap());
    let seed = u64_at(40);
    let mut f = [0u8; 8];
    let mut next = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut f)?;
        Ok(f64::from_le_bytes(f))
    };
    let carriers = (0..comps).map(|_| next(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(members);
    for _ in 0..members {
        let mut m = Vec::with_capacity(comps);
        for _ in 0..comps {
            m.push((0..n).map(|_| next(&mut r)).collect::<Result<Vec<_>>>()?);
        }
        data.push(m);
    }
    PhaseEnsemble::new(fs, seed, carriers, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::welch_real;
    use crate::propagation::{coherence, propagate_spectra};
    use approx::assert_relative_eq;

    #[test]
    fn zero_level_is_silent() {
        let s = synth_phase_noise(3, 1e8, 0.0, 1024, 1e9).unwrap();
        assert!(s.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_phase_noise(42, 1e8, 1e-10, 4096, 1e9).unwrap();
        let b = synth_phase_noise(42, 1e8, 1e-10, 4096, 1e9).unwrap();
        let c = synth_phase_noise(43, 1e8, 1e-10, 4096, 1e9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn aliasing_rejected() {
        assert!(matches!(synth_phase_noise(1, 6e8, 1.0, 1024, 1e9), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn band_limited_spectrum() {
        let fs = 1e9;
        let level = 1e-10;
        let s = synth_phase_noise(7, 1e8, level, 1 << 18, fs).unwrap();
        let (f, p) = welch_real(&s.samples, fs, &WelchConfig::new(1 << 10)).unwrap();
        for (fi, pi) in f.iter().zip(&p) {
            if *fi >= 1e6 && *fi <= 9e7 {
                let db = 10.0 * (pi / level).log10();
                assert!(db.abs() < 1.0, "{fi} Hz: {db} dB");
            }
        }
        let i150 = f.iter().position(|&x| x >= 1.5e8).unwrap();
        assert!(10.0 * (p[i150] / level).log10() < -30.0);
    }

    #[test]
    fn identity_mixing_round_trips() {
        let ens = synth_ensemble(1, 0, 2, 256, 1e3, &[NoiseSource::Flat { band_limit: 400.0, level: 1.0 }; 2], vec![0.0; 2], Exec::Sequential).unwrap();
        let m = MixingMatrix::identity(2, rfft_freqs(256, 1e3));
        let out = apply_mixing(&ens, &m, Exec::Sequential).unwrap();
        for (a, b) in out.members.iter().flatten().flatten().zip(ens.members.iter().flatten().flatten()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn projector_equalizes_components() {
        let srcs = [NoiseSource::Flat { band_limit: 400.0, level: 1.0 }, NoiseSource::Silent];
        let ens = synth_ensemble(2, 0, 2, 512, 1e3, &srcs, vec![0.0; 2], Exec::Sequential).unwrap();
        let freqs = rfft_freqs(512, 1e3);
        let x = vec![1e3; freqs.len()];
        let out = apply_mixing(&ens, &build_mixing(freqs, &x, Scheme::Lambda), Exec::Sequential).unwrap();
        for m in &out.members {
            for (a, b) in m[0].iter().zip(&m[1]) {
                assert_relative_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mixing_composes_at_field_level() {
        let srcs = [NoiseSource::Flat { band_limit: 400.0, level: 1.0 }, NoiseSource::Flat { band_limit: 300.0, level: 2.0 }];
        let ens = synth_ensemble(5, 0, 2, 512, 1e3, &srcs, vec![0.0; 2], Exec::Sequential).unwrap();
        let freqs = rfft_freqs(512, 1e3);
        let x1: Vec<f64> = freqs.iter().map(|f| f / 300.0).collect();
        let x2: Vec<f64> = freqs.iter().map(|f| (f / 100.0).sin().abs()).collect();
        let x12: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        for scheme in [Scheme::Lambda] {
            let step = apply_mixing(
                &apply_mixing(&ens, &build_mixing(freqs.clone(), &x1, scheme), Exec::Sequential).unwrap(),
                &build_mixing(freqs.clone(), &x2, scheme),
                Exec::Sequential,
            )
            .unwrap();
            let once = apply_mixing(&ens, &build_mixing(freqs.clone(), &x12, scheme), Exec::Sequential).unwrap();
            for (a, b) in step.members.iter().flatten().flatten().zip(once.members.iter().flatten().flatten()) {
                assert_relative_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sum_channel_preserved_difference_scaled() {
        let srcs = [NoiseSource::Flat { band_limit: 400.0, level: 1.0 }, NoiseSource::Flat { band_limit: 450.0, level: 0.5 }];
        let ens = synth_ensemble(9, 0, 2, 256, 1e3, &srcs, vec![0.0; 2], Exec::Sequential).unwrap();
        let freqs = rfft_freqs(256, 1e3);
        let x: Vec<f64> = freqs.iter().map(|f| 0.5 + f / 500.0).collect();
        let out = apply_mixing(&ens, &build_mixing(freqs.clone(), &x, Scheme::Lambda), Exec::Sequential).unwrap();
        let spec = |s: &[f64]| crate::dsp::fft_real(s);
        let (a0, b0) = (spec(&ens.members[0][0]), spec(&ens.members[0][1]));
        let (a1, b1) = (spec(&out.members[0][0]), spec(&out.members[0][1]));
        for k in 1..128 {
            let s0 = (a0[k] + b0[k]).norm_sqr();
            let s1 = (a1[k] + b1[k]).norm_sqr();
            assert_relative_eq!(s0, s1, max_relative = 1e-10, epsilon = 1e-12);
            let d0 = (a0[k] - b0[k]).norm_sqr();
            let d1 = (a1[k] - b1[k]).norm_sqr();
            assert_relative_eq!(d1, d0 * (-2.0 * x[k]).exp(), max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn leakage_is_negligible_with_phase() {
        let srcs = [NoiseSource::Flat { band_limit: 400.0, level: 1.0 }, NoiseSource::Silent];
        let ens = synth_ensemble(4, 0, 2, 1024, 1e3, &srcs, vec![0.0; 2], Exec::Sequential).unwrap();
        let freqs = rfft_freqs(1024, 1e3);
        let x = vec![0.7; freqs.len()];
        let theta = vec![0.4; freqs.len()];
        let m = build_lambda_mixing_with_phase(freqs, &x, Some(&theta));
        assert!(mixing_leakage(&ens, &m, Exec::Sequential).unwrap() < 1e-9);
    }

    #[test]
    fn identical_series_are_coherent() {
        let src = NoiseSource::Flat { band_limit: 400.0, level: 1.0 };
        let mut ens = synth_ensemble(11, 0, 8, 4096, 1e3, &[src, src], vec![0.0; 2], Exec::Sequential).unwrap();
        for m in ens.members.iter_mut() {
            m[1] = m[0].clone();
        }
        let s = estimate_spectrum_set(&ens, &WelchConfig::new(64), Exec::Sequential).unwrap();
        let c = coherence(&s);
        for (w, v) in c.omega_grid.iter().zip(&c.coherence) {
            if hz(*w) > 10.0 && hz(*w) < 390.0 {
                assert_relative_eq!(*v, 1.0, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn independent_series_decorrelate() {
        let src = NoiseSource::Flat { band_limit: 450.0, level: 1.0 };
        let ens = synth_ensemble(12, 0, 64, 4096, 1e3, &[src, src], vec![0.0; 2], Exec::Parallel).unwrap();
        let s = estimate_spectrum_set(&ens, &WelchConfig::new(64), Exec::Parallel).unwrap();
        let c = coherence(&s);
        let mean: f64 = c.coherence[2..30].iter().sum::<f64>() / 28.0;
        // O(1/√(members·segments)) with ~64·127 segments
        assert!(mean < 0.05, "{mean}");
    }

    #[test]
    fn level_recovered() {
        let level = 3e-3;
        let src = NoiseSource::Flat { band_limit: 400.0, level };
        let ens = synth_ensemble(13, 0, 256, 1024, 1e3, &[src, NoiseSource::Silent], vec![0.0; 2], Exec::Parallel).unwrap();
        let s = estimate_spectrum_set(&ens, &WelchConfig::new(64), Exec::Parallel).unwrap();
        for (w, v) in s.omega_grid.iter().zip(&s.w11) {
            let f = hz(*w);
            if f > 20.0 && f < 380.0 {
                assert!((v / level - 1.0).abs() < 0.1);
            }
        }
    }

    #[test]
    fn closed_form_matches_oracle_at_ln2() {
        let level = 1.0;
        let src = NoiseSource::Flat { band_limit: 500.0, level };
        let ens = synth_ensemble(21, 0, 1024, 512, 1e3, &[src, NoiseSource::Silent], vec![0.0; 2], Exec::Parallel).unwrap();
        let freqs = rfft_freqs(512, 1e3);
        let x = vec![2f64.ln(); freqs.len()];
        let out = apply_mixing(&ens, &build_mixing(freqs, &x, Scheme::Lambda), Exec::Parallel).unwrap();
        let s = estimate_spectrum_set(&out, &WelchConfig::new(32), Exec::Parallel).unwrap();
        let mean = s.w22[2..14].iter().sum::<f64>() / 12.0;
        assert!((mean - 1.0 / 16.0).abs() < 0.005, "{mean}");
        let cf = propagate_spectra(&SpectrumSet::flat(vec![1.0], 1.0, 0.0), &[2f64.ln()]).unwrap();
        assert_relative_eq!(cf.w22[0], 1.0 / 16.0);
    }

    #[test]
    fn analytic_output_matches_closed_form() {
        let freqs = vec![0.0, 1.0, 2.0];
        let x = vec![0.0, 0.4, 3.0];
        let m = build_mixing(freqs.clone(), &x, Scheme::Lambda);
        let auto = vec![vec![2.0; 3], vec![0.5; 3]];
        let s = m.output_spectra(&auto, 0, 1).unwrap();
        let cf = propagate_spectra(&SpectrumSet::flat(s.omega_grid.clone(), 2.0, 0.5), &x).unwrap();
        for k in 0..3 {
            assert_relative_eq!(s.w11[k], cf.w11[k], max_relative = 1e-14);
            assert_relative_eq!(s.w22[k], cf.w22[k], max_relative = 1e-14);
            assert_relative_eq!(s.re_w12[k], cf.re_w12[k], max_relative = 1e-14, epsilon = 1e-15);
        }
    }

    #[test]
    fn double_mixing_is_identity_at_zero() {
        let m = build_double_mixing(vec![0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        for k in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(m.at(k, i, j).re, e, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let ens = synth_ensemble(1, 0, 3, 64, 10.0, &[NoiseSource::Laser { linewidth: 1.0 }; 2], vec![1.0, -2.0], Exec::Sequential).unwrap();
        let mut buf = Vec::new();
        write_ensemble(&ens, &mut buf).unwrap();
        assert_eq!(buf.len(), 64 + 2 * 8 + 3 * 2 * 64 * 8);
        assert_eq!(&buf[0..8], MAGIC);
        assert_eq!(read_ensemble(&buf[..]).unwrap(), ens);
        buf[0] = b'X';
        assert!(read_ensemble(&buf[..]).is_err());
    }

    #[test]
    fn ensemble_validation() {
        assert!(matches!(
            PhaseEnsemble::new(1.0, 0, vec![0.0], vec![vec![vec![0.0; 4]]]),
            Err(Error::TooFewMembers { found: 1 })
        ));
        assert!(PhaseSeries::new(1.0, vec![0.0; 3]).is_err());
    }

    #[test]
    fn parallel_matches_sequential() {
        let srcs = [NoiseSource::Laser { linewidth: 5.0 }, NoiseSource::Flat { band_limit: 100.0, level: 0.1 }];
        let a = synth_ensemble(99, 7, 16, 256, 1e3, &srcs, vec![0.0; 2], Exec::Sequential).unwrap();
        let b = synth_ensemble(99, 7, 16, 256, 1e3, &srcs, vec![0.0; 2], Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
