use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod bench;
mod dagcmd;
mod verify;

/// Matrix-free Newton steps: benchmarks, checks and DAG tools.
#[derive(Debug, Parser)]
#[command(name = "mfnewton", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Flop-count sweep over random tridiagonal chains, as CSV.
    Bench(bench::BenchArgs),
    /// Run the built-in oracle and regression checks.
    Verify(verify::VerifyArgs),
    /// Rewrite a DAG file through a transformation pipeline.
    Transform(dagcmd::TransformArgs),
    /// Newton step `(F')^-1 y` of a DAG file.
    Step(dagcmd::StepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Ff,
    Af,
}

impl From<StrategyArg> for mfnewton::Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Ff => mfnewton::Strategy::FactorizeFirst,
            StrategyArg::Af => mfnewton::Strategy::AccumulateFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const VERIFY: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const NUMERICAL: u8 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: Self::NUMERICAL,
            message: message.into(),
        }
    }

    /// Numerical for factorization failures, usage otherwise.
    pub fn from_newton(context: &str, e: &mfnewton::NewtonError) -> Self {
        let message = format!("{context}: {e}");
        if e.is_numerical() {
            Self::numerical(message)
        } else {
            Self::usage(message)
        }
    }
}

pub fn read_file(path: &PathBuf) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

pub fn write_output(path: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => bench::run(&a),
        Command::Verify(a) => verify::run(&a),
        Command::Transform(a) => dagcmd::transform(&a),
        Command::Step(a) => dagcmd::step(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
