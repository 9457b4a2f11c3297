mod commands;
mod output;

use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use momentnet::Error;

/// Exact moments of local random circuits.
#[derive(Parser, Debug)]
#[command(name = "momentnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Export the two-qubit moment gate of a group.
    Pgate,
    /// k-purities of a Pauli observable.
    Purities,
    /// k-purities of a global 2-design.
    HaarPurities,
    /// Collision probability against depth.
    Anticoncentrate,
    /// Entanglement entropies of the evolving observable.
    EntropyScan,
    /// Monte Carlo purities next to the exact contraction.
    McCompare,
    /// Maximal bond dimension against depth.
    BondProfile,
    /// Contraction against the dense brute-force moment.
    OracleCheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// `hea`, `qcnn` or `file:PATH` (topology JSON).
    #[arg(long, global = true, default_value = "hea")]
    pub topology: String,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Depth or inclusive depth range `a..b`; brick-wall circuits only.
    #[arg(long, global = true, value_parser = parse_layers)]
    pub layers: Option<RangeInclusive<usize>>,
    #[arg(long, global = true, default_value = "U4")]
    pub group: String,
    /// Pauli string (`Z1`, `X2 Z5`, `ZIIX`) or computational bit string.
    #[arg(long, global = true)]
    pub obs: Option<String>,
    #[arg(long, global = true, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub t: u8,
    /// Relative singular-value cutoff of the compression sweeps.
    #[arg(long, global = true)]
    pub cutoff: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "MOMENTNET_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

fn parse_layers(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("bad layer count {x:?}: {e}"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => {
            let b = num(s)?;
            (b, b)
        }
    };
    if a > b {
        return Err(format!("empty layer range {s:?}"));
    }
    Ok(a..=b)
}

/// Failures mapped onto the process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::SvdNonConvergence { .. } | Error::Numeric(_) | Error::BasisIncomplete { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(threads) = cli.common.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let start = Instant::now();
    match commands::run(cli.command, &cli.common) {
        Ok(summary) => {
            // Keep standard output clean when it carries the document.
            if cli.common.out.is_some() {
                println!("{summary}");
            } else {
                eprintln!("{summary}");
            }
            eprintln!("wall time {:.3}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
