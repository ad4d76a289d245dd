//! `vardyn`: command-line driver for the forward-variance pipeline.
//!
//! Exit codes: 0 success, 1 compute failure, 2 usage or configuration error
//! (including missing input files).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Flags common to every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run config; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct MarketInputs {
    /// Futures CSV: date,expiry,settle,volume.
    #[arg(long)]
    pub futures: PathBuf,
    /// VIX index CSV: date,level.
    #[arg(long)]
    pub vix: Option<PathBuf>,
    /// One ISO date per line; weekends are always holidays.
    #[arg(long)]
    pub holidays: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build daily observations (adjusted quotes and error vols) from raw CSVs.
    Ingest {
        #[command(flatten)]
        market: MarketInputs,
        /// Observations JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Marginalised maximum likelihood over the k grid.
    Calibrate {
        #[command(flatten)]
        market: MarketInputs,
        /// Number of factors (1 to 3).
        #[arg(long)]
        factors: Option<usize>,
        /// Calibration record (parameters, curves, grid, timing).
        #[arg(long)]
        out: PathBuf,
        /// Daily curves, one JSON object per line.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Per-grid-point diagnostics CSV.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Extract the daily factor increments and the spot factor.
    Extract {
        #[command(flatten)]
        market: MarketInputs,
        /// Spot CSV: date,level.
        #[arg(long)]
        spot: PathBuf,
        /// Output of `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
        /// Factor series JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the series as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Moments, tails, risk premium and autocorrelation of extracted factors.
    Stats {
        /// Output of `extract`.
        #[arg(long)]
        factors: PathBuf,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Principal modes of curve moves against the model modes.
    Modes {
        /// Output of `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Quadratic spot/vol coupling fit and derived correlations.
    Nonlinear {
        /// Output of `extract`.
        #[arg(long)]
        factors: PathBuf,
        /// Output of `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// GARCH coefficients implied by the model and fitted directly.
    Garch {
        /// Output of `extract`.
        #[arg(long)]
        factors: PathBuf,
        /// Output of `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
        /// Output of `nonlinear`.
        #[arg(long)]
        nonlinear: PathBuf,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Model VVIX and, given a λ series, its vol-of-vol dynamics.
    Vvix {
        /// Calibration record; the published parameters are used without it.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Tenor of the first expiry.
        #[arg(long, default_value = "10d")]
        tau1: String,
        /// λ series CSV: date,level.
        #[arg(long)]
        lambda: Option<PathBuf>,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Term-structure report: smile, skewness, SSR and variance-swap terms.
    Analytics {
        /// Calibration record; its last curve is used. Without it the
        /// published parameters on a flat curve.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Output of `nonlinear`; the replica coupling is used without it.
        #[arg(long)]
        nonlinear: Option<PathBuf>,
        /// Comma-separated tenors: 10d, 2w, 3m, 1y or years.
        #[arg(long, default_value = "1m,3m,6m")]
        maturities: String,
        /// Multiplies every θ.
        #[arg(long)]
        lambda_scale: Option<f64>,
        /// Flat forward variance used without a calibration.
        #[arg(long, default_value_t = 0.04)]
        xi0: f64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo ensemble summary and optional per-path dump.
    Simulate {
        /// Calibration record; published parameters on a flat curve without it.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Output of `nonlinear`; the replica coupling is used without it.
        #[arg(long)]
        nonlinear: Option<PathBuf>,
        /// Number of paths.
        #[arg(long)]
        paths: Option<usize>,
        /// Daily steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Multiplies every θ.
        #[arg(long)]
        lambda_scale: Option<f64>,
        /// Flat forward variance used without a calibration.
        #[arg(long, default_value_t = 0.04)]
        xi0: f64,
        /// Forward-variance tenors reported at the horizon.
        #[arg(long, default_value = "0,1m,3m,6m")]
        tenors: String,
        /// Summary JSON.
        #[arg(long)]
        out: PathBuf,
        /// Binary per-path dump (little-endian, layout in the README).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Generate a synthetic market with known ground truth.
    Synth {
        /// Business days to generate.
        #[arg(long)]
        days: Option<usize>,
        /// Output directory for futures.csv, spot.csv, vix.csv, truth.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle suite and print the pass/fail table.
    Validate {
        /// Directory holding truth.json, calibration.json and factors.json;
        /// without it the synthetic pipeline runs in process.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Comma-separated criterion ids.
        #[arg(long)]
        only: Option<String>,
        /// JSON results.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 1 when any criterion fails.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Parser, Debug)]
#[command(name = "vardyn", version, about = "Lognormal forward-variance model: calibration, factors, analytics")]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Compute(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<vardyn::Error> for Failure {
    fn from(e: vardyn::Error) -> Self {
        match e {
            vardyn::Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => Failure::Usage(e.to_string()),
            e => Failure::Compute(e.into()),
        }
    }
}

fn main() -> ExitCode {
    let root = match Root::try_parse() {
        Ok(r) => r,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(root.command, &root.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
