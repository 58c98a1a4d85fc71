use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn eitnoise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eitnoise")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(&p, "[noise]\nensemble = 4\nn_samples = 16384\n\n[analysis]\nsegment_len = 1024\n").unwrap();
    p.to_string_lossy().into_owned()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn validate_prints_effective_config() {
    let o = eitnoise(&["validate"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[medium]"));
    assert!(text.contains("dark_decay_hz = 300000"));
}

#[test]
fn unknown_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "[medium]\nbogus = 1\n").unwrap();
    let o = eitnoise(&["validate", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn invalid_value_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "[analysis]\ntau_list = [2.0, 1.0, 3.0, 4.0]\n").unwrap();
    let o = eitnoise(&["fwhm-sweep", "--fast", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("analysis.tau_list"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&eitnoise(&["frob"])), 1);
    assert_eq!(code(&eitnoise(&["noise-transfer", "--fast", "--oracle"])), 1);
    assert_eq!(code(&eitnoise(&["--help"])), 0);
}

#[test]
fn aliasing_is_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("alias.toml");
    fs::write(&p, "[noise]\nsample_rate_hz = 1e8\nensemble = 2\n").unwrap();
    let out = dir.path().join("out");
    let o = eitnoise(&["noise-transfer", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn io_failures_exit_three() {
    assert_eq!(code(&eitnoise(&["validate", "--config", "/nonexistent/eitnoise.toml"])), 3);
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("file");
    fs::write(&file, "").unwrap();
    let out = file.join("sub");
    assert_eq!(code(&eitnoise(&["noise-transfer", "--fast", "--out", out.to_str().unwrap()])), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, extra) in [(&a, "--sequential"), (&b, "--seed=1"), (&c, "--seed=2")] {
        let o = eitnoise(&["noise-transfer", "--config", &cfg, "--out", out.to_str().unwrap(), extra]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(csv_files(&a), csv_files(&b));
    let oracle = |d: &Path| fs::read(d.join("s1_dr0mhz_oracle.csv")).unwrap();
    assert_ne!(oracle(&a), oracle(&c));
}

#[test]
fn writes_provenance_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = eitnoise(&["noise-transfer", "--fast", "--seed", "7", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let json = fs::read_to_string(out.join("provenance.json")).unwrap();
    assert!(json.contains("\"scenario\": \"noise-transfer\""));
    assert!(json.contains("\"seed\": 7"));
    assert!(json.contains("\"mode\": \"fast\""));
    assert!(out.join("summary.csv").exists());
    assert!(out.join("transfer_sweep.csv").exists());
}

#[test]
fn ensemble_dump_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dump.toml");
    fs::write(&p, "[noise]\nensemble = 2\nn_samples = 4096\n\n[analysis]\nsegment_len = 512\n\n[output]\ndump_ensemble = true\n").unwrap();
    let out = dir.path().join("out");
    let o = eitnoise(&["noise-transfer", "--fast", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let bytes = fs::read(out.join("ensemble.bin")).unwrap();
    assert_eq!(&bytes[..8], b"EITPHASE");
    assert_eq!(bytes.len(), 64 + 2 * 8 + 2 * 2 * 4096 * 8);
}
