mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use output::Format;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

/// Result of a command: `Ok(None)` passes, `Ok(Some(reason))` is a
/// scientific failure.
pub type Outcome = Result<Option<String>, CliError>;

#[derive(Debug, Parser)]
#[command(name = "scot", version, about = "Spacetime-constrained oblivious transfer laboratory")]
pub struct Cli {
    /// File of `key = value` lines applied under explicit flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Result file; parent directories are created. Defaults to stdout.
    #[arg(long, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "SCOT_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the honest protocol once and check Bob's output.
    Honest(HonestArgs),
    /// Evaluate a built-in cheating strategy against the security bound.
    Attack(AttackArgs),
    /// Relay attack with a relaxed or the original side-1 region.
    TimelikeDemo(DemoArgs),
    /// Classical protocol tables and the double-run attack.
    Classical(ClassicalArgs),
    /// Ideal and noisy security bounds.
    Bounds(BoundsArgs),
    /// Multi-start maximization of the single-qubit game value.
    Optimize(OptimizeArgs),
    /// Run every acceptance criterion and print a pass/fail table.
    VerifyAll(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Slab,
    Perbit,
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    /// Slab region size.
    #[arg(long, default_value_t = 0.1)]
    pub v: f64,
    #[arg(long, value_enum, default_value_t = Variant::Slab)]
    pub variant: Variant,
    /// Handover spacing of the per-bit layout.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct HonestArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub b: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Alice's first string, bit 0 first; random from the seed if absent.
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long)]
    pub x1: Option<String>,
    /// Channel error rate; Bob's output is then checked against the
    /// Hamming threshold.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Write the message transcript here.
    #[arg(long, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Mc,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// breidbart, random-guess, cloning
    #[arg(long)]
    pub strategy: String,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    pub mode: Mode,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side targeted by `random-guess`.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub b: u8,
    /// Accept sampled outputs within Hamming distance `gamma * n`.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    #[arg(long, default_value_t = 0.1)]
    pub v: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the original side-1 region instead of the relaxed one.
    #[arg(long)]
    pub original: bool,
    #[arg(long, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassicalMode {
    /// Exact scan of the one-parameter trade-off family.
    Scan,
    /// Seeded random tables.
    Random,
    /// A table read from `--table`.
    Table,
}

#[derive(Debug, Args)]
pub struct ClassicalArgs {
    #[arg(long, value_enum, default_value_t = ClassicalMode::Scan)]
    pub mode: ClassicalMode,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub tables: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub n: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Largest `n` tabulated.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, default_value_t = 64)]
    pub restarts: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iterations: usize,
    /// Feasibility tolerance on the constraint residuals.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Write the maximizing variables here.
    #[arg(long, value_name = "FILE")]
    pub emit_witness: Option<PathBuf>,
    /// Evaluate a witness file instead of optimizing.
    #[arg(long, value_name = "FILE", conflicts_with = "emit_witness")]
    pub check_witness: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Smaller samples and enumeration depth.
    #[arg(long)]
    pub quick: bool,
    /// Comma-separated criterion ids; all by default.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u8>,
}

fn run(argv: Vec<OsString>) -> Result<ExitCode, clap::Error> {
    let argv = match config::merge(argv, &Cli::command()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let cli = Cli::try_parse_from(argv)?;
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: thread count must be positive");
            return Ok(ExitCode::from(2));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(match commands::dispatch(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(reason)) => {
            eprintln!("FAIL: {reason}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    })
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(code) => code,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            ExitCode::from(code as u8)
        }
    }
}
