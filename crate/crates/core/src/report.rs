//! Scenario reports and their on-disk form: CSV tables plus a JSON sidecar
//! with provenance, fits and scalar metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::BeatSpectrum;
use crate::config::ScenarioConfig;
use crate::fit::FitResult;
use crate::model::hz;
use crate::propagation::SpectrumSet;
use crate::Result;

/// One optical-density point of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    pub tau: f64,
    pub fwhm_hz: f64,
    pub fwhm_sigma_hz: f64,
    /// Mean ω₁/ω₂ coherence inside the initial transparency window (ω < Γ_g/3).
    pub coherence_low: f64,
    /// Mean coherence well outside it (3Γ_g ≤ ω < 10Γ_g).
    pub coherence_high: f64,
}

/// Free-form numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub scenario: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the effective configuration in canonical TOML form.
    pub config_hash: String,
    pub mode: String,
}

impl Provenance {
    pub fn new(scenario: &str, cfg: &ScenarioConfig, mode: &str) -> Self {
        Self {
            scenario: scenario.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.noise.seed,
            config_hash: config_hash(cfg),
            mode: mode.into(),
        }
    }
}

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub rows: Vec<ReportRow>,
    /// Rows from the Monte Carlo path when both paths ran.
    pub oracle_rows: Option<Vec<ReportRow>>,
    pub spectra: Vec<(String, BeatSpectrum)>,
    pub spectrum_sets: Vec<(String, SpectrumSet)>,
    pub tables: Vec<Table>,
    pub fits: Vec<(String, FitResult)>,
    pub metrics: BTreeMap<String, f64>,
    pub provenance: Provenance,
}

impl ScenarioReport {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            rows: Vec::new(),
            oracle_rows: None,
            spectra: Vec::new(),
            spectrum_sets: Vec::new(),
            tables: Vec::new(),
            fits: Vec::new(),
            metrics: BTreeMap::new(),
            provenance,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn fit(&self, name: &str) -> Option<&FitResult> {
        self.fits.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn spectrum(&self, name: &str) -> Option<&BeatSpectrum> {
        self.spectra.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.into_iter().map(num))?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_csv(
        path,
        &["tau", "fwhm_hz", "fwhm_sigma_hz", "coherence_low", "coherence_high"],
        rows.iter().map(|r| vec![r.tau, r.fwhm_hz, r.fwhm_sigma_hz, r.coherence_low, r.coherence_high]),
    )
}

/// Beat spectrum as `offset_hz,power`.
pub fn write_spectrum(path: &Path, s: &BeatSpectrum) -> Result<()> {
    write_csv(path, &["offset_hz", "power"], s.offset_grid.iter().zip(&s.power).map(|(f, p)| vec![*f, *p]))
}

/// Spectrum set as `omega_hz,w11,w22,re_w12,im_w12` (grid converted to Hz).
pub fn write_spectrum_set(path: &Path, s: &SpectrumSet) -> Result<()> {
    write_csv(
        path,
        &["omega_hz", "w11", "w22", "re_w12", "im_w12"],
        (0..s.len()).map(|i| vec![hz(s.omega_grid[i]), s.w11[i], s.w22[i], s.re_w12[i], s.im_w12[i]]),
    )
}

#[derive(Serialize)]
struct Sidecar<'a> {
    provenance: &'a Provenance,
    files: Vec<String>,
    metrics: &'a BTreeMap<String, f64>,
    fits: BTreeMap<&'a str, &'a FitResult>,
}

/// Writes every table of `report` into `dir` and returns the written paths;
/// the JSON sidecar `provenance.json` comes last.
pub fn write_report(report: &ScenarioReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut add = |name: String| {
        let p = dir.join(&name);
        files.push(name);
        p
    };
    write_rows(&add("summary.csv".into()), &report.rows)?;
    if let Some(rows) = &report.oracle_rows {
        write_rows(&add("summary_oracle.csv".into()), rows)?;
    }
    for (name, s) in &report.spectra {
        write_spectrum(&add(format!("{name}.csv")), s)?;
    }
    for (name, s) in &report.spectrum_sets {
        write_spectrum_set(&add(format!("{name}.csv")), s)?;
    }
    for t in &report.tables {
        let header: Vec<&str> = t.columns.iter().map(String::as_str).collect();
        write_csv(&add(format!("{}.csv", t.name)), &header, t.rows.iter().cloned())?;
    }
    let mut fits_rows = Vec::new();
    for (name, f) in &report.fits {
        for (k, p) in f.names.iter().enumerate() {
            fits_rows.push(vec![name.clone(), p.clone(), num(f.params[k]), num(f.sigmas[k]), f.converged.to_string()]);
        }
    }
    let fits_path = add("fits.csv".into());
    let mut w = csv::Writer::from_path(&fits_path)?;
    w.write_record(["fit", "param", "value", "sigma", "converged"])?;
    for r in fits_rows {
        w.write_record(r)?;
    }
    w.flush()?;

    let sidecar = Sidecar {
        provenance: &report.provenance,
        files: files.clone(),
        metrics: &report.metrics,
        fits: report.fits.iter().map(|(n, f)| (n.as_str(), f)).collect(),
    };
    let json_path = dir.join("provenance.json");
    fs::write(&json_path, serde_json::to_string_pretty(&sidecar)? + "\n")?;
    let mut out: Vec<PathBuf> = files.into_iter().map(|f| dir.join(f)).collect();
    out.push(json_path);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScenarioReport {
        let cfg = ScenarioConfig::default();
        let mut r = ScenarioReport::new(Provenance::new("test", &cfg, "fast"));
        r.rows.push(ReportRow { tau: 1.0, fwhm_hz: 0.5e6, fwhm_sigma_hz: 1e3, coherence_low: 0.1, coherence_high: 0.9 });
        r.spectra.push(("beat".into(), BeatSpectrum { offset_grid: vec![-1.0, 0.0, 1.0], power: vec![0.5, 1.0, 0.5] }));
        r.metrics.insert("x".into(), 1.25);
        r
    }

    #[test]
    fn writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_report(&sample(), dir.path()).unwrap();
        let names: Vec<String> = paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["summary.csv", "beat.csv", "fits.csv", "provenance.json"]);
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().next().unwrap(), "tau,fwhm_hz,fwhm_sigma_hz,coherence_low,coherence_high");
        assert_eq!(summary.lines().nth(1).unwrap(), "1,500000,1000,0.1,0.9");
        let beat = fs::read_to_string(dir.path().join("beat.csv")).unwrap();
        assert!(beat.starts_with("offset_hz,power\n-1,0.5\n"));
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&paths[3]).unwrap()).unwrap();
        assert_eq!(json["provenance"]["seed"], 1);
        assert_eq!(json["provenance"]["config_hash"].as_str().unwrap().len(), 64);
        assert_eq!(json["metrics"]["x"], 1.25);
    }

    #[test]
    fn hash_tracks_config() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.noise.seed = 2;
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
