//! `zempc`: economic zone construction, steady states, closed-loop simulation,
//! risk sweeps, controller comparison and validation from one config file.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use zempc::simlab::ControllerKind;

use config::{parse_deltas, parse_seeds, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "zempc", version, about = "Robust economic MPC with zone tracking")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `simulation.disturbance`.
    #[arg(long, global = true, value_enum)]
    disturbance: Option<Switch>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Controller {
    Proposed,
    Conventional,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Builds the economic zone at `zone.delta` and writes its artifact.
    ComputeZone,
    /// Solves the best steady states in the target zone and the referenced economic zones.
    SteadyState,
    /// One closed-loop run; writes trajectory and solver diagnostics CSVs.
    Simulate {
        #[arg(long, value_enum, default_value = "proposed")]
        controller: Controller,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Risk-factor sweep; writes sweep.csv.
    Sweep {
        /// Comma-separated risk factors.
        #[arg(long)]
        deltas: Option<String>,
        /// Comma-separated seeds; `a..b` ranges are inclusive.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Proposed vs conventional on paired disturbance realizations.
    Compare {
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Runs the validation suite and writes validation.json.
    Validate,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("ZEMPC_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::config(format!("ZEMPC_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("cannot set up {n} worker threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let path = cli.config.ok_or_else(|| CliError::config("--config is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(d) = cli.disturbance {
        cfg.experiment.disturbance = matches!(d, Switch::On);
    }
    let seeds = |arg: Option<String>, cfg: &RunConfig| match arg {
        Some(s) => parse_seeds(&s),
        None => Ok(cfg.seeds.clone()),
    };
    match cli.command {
        Command::ComputeZone => commands::compute_zone(&cfg),
        Command::SteadyState => commands::steady_state(&cfg),
        Command::Simulate { controller, seed } => {
            let kind = match controller {
                Controller::Proposed => ControllerKind::Proposed,
                Controller::Conventional => ControllerKind::Conventional,
            };
            commands::simulate(&cfg, kind, seed.unwrap_or(cfg.seeds[0]))
        }
        Command::Sweep { deltas, seeds: s } => {
            let deltas = match deltas {
                Some(d) => parse_deltas(&d)?,
                None => cfg.deltas.clone(),
            };
            commands::sweep(&cfg, &deltas, &seeds(s, &cfg)?)
        }
        Command::Compare { seeds: s } => commands::compare(&cfg, &seeds(s, &cfg)?),
        Command::Validate => commands::validate(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
            if let Some(h) = e.hint() {
                eprintln!("hint: {h}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
