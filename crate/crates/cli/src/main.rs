mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eyewitness::config::{parse_config, RunConfig};

/// Overrides `limits.max_window` (terms per windowed summation).
pub const ENV_MAX_WINDOW: &str = "EYEWITNESS_MAX_WINDOW";
/// Overrides `limits.max_points` (coarse-grid points per stopping curve).
pub const ENV_MAX_POINTS: &str = "EYEWITNESS_MAX_POINTS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] eyewitness::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_resource_exhaustion() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eyewitness", version, about = "Click statistics and run-count planning for seeing non-classical light")]
struct Cli {
    /// TOML run configuration; defaults apply to omitted fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving the CSV and report artifacts
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StateChoice {
    /// Conditional state of the heralded preparation
    Prepared,
    /// Ideal (|0> + |1>)/sqrt(2)
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// g2 of the displaced ideal superposition against alpha
    Fig1,
    /// Count distributions and estimator in the transformed frequency plane
    Fig3,
    /// Stopping probability against the run count at 1% and 10%
    Fig4,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Scan g2 over real displacements
    G2Scan {
        #[arg(long, default_value_t = 0.1)]
        alpha_min: f64,
        #[arg(long, default_value_t = 16.0)]
        alpha_max: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, value_enum, default_value_t = StateChoice::Prepared)]
        state: StateChoice,
    },
    /// Heralded preparation: click probability, fidelity, rate and SNR budgets
    Prepare {
        #[arg(long, default_value_t = 80e6)]
        rep_rate: f64,
        #[arg(long, default_value_t = 0.02)]
        duty_cycle: f64,
        #[arg(long, default_value_t = 0.8e-3)]
        p_pair: f64,
        #[arg(long, default_value_t = 0.08)]
        eta_herald: f64,
        #[arg(long, default_value_t = 100.0)]
        noise_over_signal: f64,
        #[arg(long, default_value_t = 2000.0)]
        extinction_ratio: f64,
    },
    /// Certification plan: critical values, stopping curve and expected runs
    Plan {
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        coarse_n: Option<u64>,
    },
    /// Expected number of runs only
    ExpectedRuns {
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        coarse_n: Option<u64>,
    },
    /// Monte Carlo trajectories against the analytic stopping curve
    Simulate {
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        coarse_n: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimize (alpha, beta, a[, t]) as set in the optimizer section
    Optimize {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Worst-case classical p-value surface at the critical value for N runs
    ClassicalCheck {
        #[arg(long, default_value_t = 350_000)]
        n: u64,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Plot-ready data for the figures
    Figures {
        #[arg(value_enum)]
        figure: Figure,
        /// Run count for fig3
        #[arg(long, default_value_t = 350_000)]
        n: u64,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Ok(v) = std::env::var(ENV_MAX_WINDOW) {
        cfg.limits.max_window = v
            .parse()
            .map_err(|_| CliError::Usage(format!("{ENV_MAX_WINDOW}: `{v}` is not a count")))?;
    }
    if let Ok(v) = std::env::var(ENV_MAX_POINTS) {
        cfg.limits.max_points = v
            .parse()
            .map_err(|_| CliError::Usage(format!("{ENV_MAX_POINTS}: `{v}` is not a count")))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_ref())?;
    commands::apply_overrides(&cli.command, &mut cfg);
    cfg.validate()?;
    let label = commands::label(&cli.command);
    let mut art = output::Artifacts::new(&cli.out_dir, &cfg.to_toml(), &label)?;
    let res = commands::execute(&cli.command, &cfg, &mut art);
    if res.is_err() {
        art.remove_all();
    }
    res
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
