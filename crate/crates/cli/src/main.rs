use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eitnoise::config::{validate_config, ScenarioConfig};
use eitnoise::par::Exec;
use eitnoise::oracle::write_ensemble;
use eitnoise::report::{write_report, ScenarioReport};
use eitnoise::scenario::{input_ensemble, run_fwhm_sweep, run_lowfreq_dip, run_noise_transfer, Mode, RunOptions};
use eitnoise::{Error, Result};

#[derive(Parser)]
#[command(name = "eitnoise", version, about = "Phase-noise transfer scenarios for Λ and double-Λ EIT media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// S₁/S₂ beat spectra at fixed τ and the Raman-detuning transfer sweep.
    NoiseTransfer(RunArgs),
    /// Beat FWHM against optical density with exponential-decay fits.
    FwhmSweep(RunArgs),
    /// S₁₂/S₃₄ low-frequency dip of the double-Λ scheme.
    LowfreqDip(RunArgs),
    /// Parse and validate a config, print the effective values.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `noise.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo path only.
    #[arg(long, conflicts_with = "fast")]
    oracle: bool,
    /// Closed-form path only.
    #[arg(long)]
    fast: bool,
    /// Disable the thread pool.
    #[arg(long)]
    sequential: bool,
}

fn load(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => validate_config(p),
        None => Ok(ScenarioConfig::default()),
    }
}

type Runner = fn(&ScenarioConfig, &RunOptions) -> Result<ScenarioReport>;

fn run(args: RunArgs, name: &str, scenario: Runner) -> Result<()> {
    let mut cfg = load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.noise.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let mode = match (args.oracle, args.fast) {
        (true, _) => Mode::Oracle,
        (_, true) => Mode::Fast,
        _ => Mode::Both,
    };
    let exec = if args.sequential { Exec::Sequential } else { Exec::Parallel };
    let report = scenario(&cfg, &RunOptions { mode, exec })?;
    let files = write_report(&report, &out)?;
    for (k, v) in &report.metrics {
        println!("{k} = {v}");
    }
    println!("wrote {} files to {}", files.len(), out.display());
    if cfg.output.dump_ensemble {
        let ens = input_ensemble(&cfg, name, exec)?;
        let path = out.join("ensemble.bin");
        let mut w = BufWriter::new(File::create(&path)?);
        write_ensemble(&ens, &mut w)?;
        w.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors count as configuration errors (exit 1), not clap's default 2.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::NoiseTransfer(a) => run(a, "noise-transfer", run_noise_transfer),
        Command::FwhmSweep(a) => run(a, "fwhm-sweep", run_fwhm_sweep),
        Command::LowfreqDip(a) => run(a, "lowfreq-dip", run_lowfreq_dip),
        Command::Validate { config } => load(config.as_deref()).map(|cfg| print!("{}", cfg.to_toml())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
