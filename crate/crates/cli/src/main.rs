#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pdfflow::estimator::SliceMethod;
use pdfflow::{Error, Vec3};

use crate::config::{parse_config, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "pdfflow", version, about = "Velocity PDF transport: coefficients, estimation, verification")]
struct Cli {
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    force: bool,
    /// Exit with status 3 when an assertable check fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Auto,
    Mc,
    KernelQuadrature,
    Characteristic,
}

impl From<MethodArg> for SliceMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Auto => SliceMethod::Auto,
            MethodArg::Mc => SliceMethod::Mc,
            MethodArg::KernelQuadrature => SliceMethod::KernelQuadrature,
            MethodArg::Characteristic => SliceMethod::Characteristic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    Beta,
    Q,
    Residual,
    Mass,
    Moments,
    Positivity,
    Classify,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Print B, A, Q, C and the diffusion matrix at one point.
    Coeffs {
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        x: Vec3,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        u: Vec3,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate p(u; x, t) at one point.
    Estimate {
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        x: Vec3,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        u: Vec3,
        #[arg(long)]
        t: f64,
        /// Overrides the configured slice method.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate p over the configured (u1, u2) grid; writes CSV and metadata.
    Slice {
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        x: Vec3,
        #[arg(long)]
        t: f64,
        #[arg(long, allow_hyphen_values = true)]
        u3: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run invariant checks and print a JSON report.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write figure data for the worked example.
    Example {
        /// t05, t40, t40x12 or all.
        #[arg(long, default_value = "all")]
        figure: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump one characteristic path as CSV.
    Characteristic {
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        x: Vec3,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        u: Vec3,
        #[arg(long)]
        t: f64,
        /// Noise stream of the path under the configured seed.
        #[arg(long, default_value_t = 0)]
        path_index: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got '{s}'"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(parts) {
        *slot = p.trim().parse().map_err(|e| format!("'{p}': {e}"))?;
    }
    Ok(v)
}

/// Process exit status for a library error.
fn exit_status(e: &Error) -> u8 {
    if e.is_numeric() || matches!(e, Error::Io(_) | Error::Csv(_) | Error::Json(_)) {
        2
    } else {
        1
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("PDFFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("PDFFLOW_THREADS must be a positive integer (got '{raw}')")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    cfg.strict |= cli.strict;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<commands::Outcome, Error> {
    configure_threads()?;
    let cfg = load_config(&cli)?;
    let force = cli.force;
    match cli.verb {
        Verb::Coeffs { x, u, t, out } => commands::coeffs(&cfg, &x, &u, t, out.as_deref(), force),
        Verb::Estimate { x, u, t, method, out } => {
            commands::estimate(&cfg, &x, &u, t, method.map(Into::into), out.as_deref(), force)
        }
        Verb::Slice { x, t, u3, method, out } => commands::slice(&cfg, &x, t, u3, method.map(Into::into), &out, force),
        Verb::Verify { suite, out } => commands::verify(&cfg, suite, out.as_deref(), force),
        Verb::Example { figure, out } => commands::example(&cfg, &figure, &out, force),
        Verb::Characteristic {
            x,
            u,
            t,
            path_index,
            out,
        } => commands::characteristic(&cfg, &x, &u, t, path_index, out.as_deref(), force),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::StrictFailure(n)) => {
            eprintln!("error: {n} assertable check(s) failed under --strict");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}
