mod commands;
mod config;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::{CommonArgs, Format, RunConfig};
use crate::verify::{Fault, Suite};

#[derive(Parser)]
#[command(name = "jaclab", version, about = "Radial solutions, perturbations and energy blow-up for det Du = f")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Radial solution of det Du = f: profile table, Jacobian roundtrip, Sobolev energies.
    SolveRadial(CommonArgs),
    /// Builds the boundary-layer perturbation of a density at one radius R.
    Perturb(CommonArgs),
    /// Sweeps R and fits the energy and tail exponents; writes CSV and JSON.
    Scan(CommonArgs),
    /// Energy estimate of radial solutions over a seeded density family.
    EstimateCheck(CommonArgs),
    /// Truncated energies of a datum in L^p but not in L^q.
    Sharpness(CommonArgs),
    /// Quasiminimality chain for the radial solution and twisted competitors.
    Minimality(CommonArgs),
    /// Runs the invariant suites.
    Verify {
        /// Restrict to these suites.
        #[arg(long, value_enum)]
        suite: Vec<Suite>,
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Invariant(String),
}

impl From<jaclab::Error> for CliError {
    fn from(e: jaclab::Error) -> Self {
        use jaclab::Error::*;
        match e {
            InvalidConfig(_) | InvalidDensity(_) | InvalidBaseDensity(_) | ParameterDomain(_) | DimensionMismatch(..)
            | BoundaryViolation(_) | FitRefused { .. } | InvalidInput(_) | RadiusOutOfDomain { .. }
            | BelowMinimumRadius { .. } | UndefinedAtOrigin => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invariant(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) => format!("config error: {m}"),
            CliError::Numerical(m) => format!("numerical failure: {m}"),
            CliError::Invariant(m) => format!("invariant failed: {m}"),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("JACLAB_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Config(format!("JACLAB_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Writes the artifacts of a finished command; nothing is written on error.
fn emit(command: &str, cfg: &RunConfig, outcome: &Outcome) -> Result<(), CliError> {
    let format = cfg.format();
    if format == Format::Csv && outcome.csv.is_none() {
        return Err(CliError::Config(format!("`{command}` has no CSV output")));
    }
    match &cfg.output.path {
        Some(path) if command == "scan" => {
            let (json, csv): (PathBuf, PathBuf) = (path.with_extension("json"), path.with_extension("csv"));
            write(&json, &outcome.json)?;
            write(&csv, outcome.csv.as_deref().unwrap_or_default())?;
        }
        Some(path) => match format {
            Format::Json => write(path, &outcome.json)?,
            Format::Csv => write(path, outcome.csv.as_deref().unwrap_or_default())?,
        },
        None => match format {
            Format::Json => print!("{}", outcome.json),
            Format::Csv => print!("{}", outcome.csv.as_deref().unwrap_or_default()),
        },
    }
    if cfg.output.path.is_some() {
        println!("{}", outcome.summary);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (name, args, run_cmd): (&str, &CommonArgs, fn(&RunConfig) -> Result<Outcome, CliError>) = match &cli.command {
        Command::SolveRadial(a) => ("solve-radial", a, commands::solve_radial_cmd),
        Command::Perturb(a) => ("perturb", a, commands::perturb_cmd),
        Command::Scan(a) => ("scan", a, commands::scan_cmd),
        Command::EstimateCheck(a) => ("estimate-check", a, commands::estimate_cmd),
        Command::Sharpness(a) => ("sharpness", a, commands::sharpness_cmd),
        Command::Minimality(a) => ("minimality", a, commands::minimality_cmd),
        Command::Verify {
            suite,
            inject_fault,
            common,
        } => {
            let cfg = RunConfig::load("verify", common)?;
            if cfg.format() == Format::Csv {
                return Err(CliError::Config("`verify` has no CSV output".into()));
            }
            let report = verify::run(suite, cfg.seed(), *inject_fault);
            print!("{}", report.table());
            if let Some(path) = &cfg.output.path {
                let json = jaclab::report::to_canonical_json(&report)
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
                write(path, &json)?;
            }
            if !report.failed.is_empty() {
                return Err(CliError::Invariant(report.failed.join(", ")));
            }
            return Ok(());
        }
    };
    let cfg = RunConfig::load(name, args)?;
    let outcome = run_cmd(&cfg)?;
    emit(name, &cfg, &outcome)?;
    match outcome.violation {
        Some(v) => Err(CliError::Invariant(v)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jaclab: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
