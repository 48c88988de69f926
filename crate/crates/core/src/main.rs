use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use freering::experiments::{
    run_assumption_audit, run_brown, run_compare, run_convolve, run_jordan, run_local_law,
    run_local_window, run_lsv, run_simulate, RunReport, ScenarioConfig,
};
use freering::{Error, Result};

/// Subordination-based Brown fields for the deformed single ring model and
/// the random-matrix experiments that validate them.
#[derive(Parser)]
#[command(name = "freering", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the ensemble seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory; overrides the config's output field (default "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for field construction (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Density of the free additive convolution of two symmetric laws.
    Convolve(RunArgs),
    /// Brown field (potential, density, region labels) of the configured model.
    Brown(RunArgs),
    /// Sample the ensemble: eigenvalues per trial plus probe singular values.
    Simulate(RunArgs),
    /// Simulate and score the eigenvalue cloud against the Brown field.
    Compare(RunArgs),
    /// Twin-ensemble study for the shift-block deformation.
    Jordan(RunArgs),
    /// Resolvent error scaling across dimensions at a bulk probe.
    LocalLaw(RunArgs),
    /// Linear statistics of a shrinking window against the field integral.
    LocalWindow(RunArgs),
    /// Least-singular-value tail curves over a probe set.
    Lsv(RunArgs),
    /// Exact audit of the resolvent-bound constant for the deterministic part.
    Audit(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Convolve(a)
            | Command::Brown(a)
            | Command::Simulate(a)
            | Command::Compare(a)
            | Command::Jordan(a)
            | Command::LocalLaw(a)
            | Command::LocalWindow(a)
            | Command::Lsv(a)
            | Command::Audit(a) => a,
        }
    }

    fn runner(&self) -> fn(&ScenarioConfig, Option<&Path>) -> Result<RunReport> {
        match self {
            Command::Convolve(_) => run_convolve,
            Command::Brown(_) => run_brown,
            Command::Simulate(_) => run_simulate,
            Command::Compare(_) => run_compare,
            Command::Jordan(_) => run_jordan,
            Command::LocalLaw(_) => run_local_law,
            Command::LocalWindow(_) => run_local_window,
            Command::Lsv(_) => run_lsv,
            Command::Audit(_) => run_assumption_audit,
        }
    }
}

fn execute(cmd: &Command) -> Result<bool> {
    let args = cmd.args();
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let mut cfg = ScenarioConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        match cfg.ensemble.as_mut() {
            Some(spec) => spec.seed = seed,
            None => {
                return Err(Error::Config(
                    "--seed given but the config has no ensemble section".into(),
                ))
            }
        }
    }
    let out_dir: PathBuf = args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let report = cmd.runner()(&cfg, Some(&out_dir))?;

    println!("scenario: {}", report.scenario);
    for (name, pass) in &report.passes {
        let value = report.metrics.get(name).copied().unwrap_or(f64::NAN);
        println!(
            "{} {name} = {value}",
            if *pass { "PASS" } else { "FAIL" }
        );
    }
    let passed = report.passes.values().filter(|&&p| p).count();
    println!(
        "{}/{} checks passed in {:.2}s; artifacts in {}",
        passed,
        report.passes.len(),
        report.timing_seconds,
        out_dir.display()
    );
    Ok(report.all_passed())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match execute(&cli.command) {
        Ok(true) => std::process::exit(0),
        Ok(false) => std::process::exit(2),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
