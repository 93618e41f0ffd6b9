use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rinasim_core::conformance::check_all;
use rinasim_core::daf::metrics_csv;
use rinasim_core::scenario::parse_scenario;
use rinasim_core::sim::Simulation;
use rinasim_core::trace::parse_trace;
use rinasim_core::SimTime;

#[derive(Parser)]
#[command(
    name = "rinasim",
    version,
    about = "Run recursive IPC network scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a scenario and run it.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    file: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the stop time, in seconds.
    #[arg(long)]
    until: Option<f64>,
    /// Write the event trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the ping metrics CSV here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Parse and validate only.
    #[arg(long)]
    validate_only: bool,
    /// Exit with status 2 on leaks or flow errors too.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
        }
    }
}

const VALIDATION_FAILURE: u8 = 1;
const BREACH: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    env_logger::Builder::new()
        .filter_level(args.log_level.into())
        .format_timestamp(None)
        .init();
    match run(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(BREACH)
        }
    }
}

fn run(args: &RunArgs) -> anyhow::Result<u8> {
    let text = match fs::read_to_string(&args.file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", args.file.display());
            return Ok(VALIDATION_FAILURE);
        }
    };
    let scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", args.file.display());
            return Ok(VALIDATION_FAILURE);
        }
    };
    if args.validate_only {
        println!("{}: valid", args.file.display());
        return Ok(0);
    }

    let seed = args.seed.unwrap_or(scenario.seed);
    let mut sim = Simulation::build_with_seed(&scenario, seed, true);
    if let Some(s) = args.until {
        anyhow::ensure!(
            s.is_finite() && s >= 0.0,
            "--until must be a non-negative number of seconds"
        );
        sim.set_stop(SimTime::from_secs_f64(s));
    }
    info!("running {} with seed {seed}", scenario.name);
    let summary = sim.run();
    print!("{}", summary.render());

    if let Some(path) = &args.metrics {
        fs::write(path, metrics_csv(&sim.samples()))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let trace = sim.into_trace();
    if let Some(path) = &args.trace {
        fs::write(path, &trace).with_context(|| format!("writing {}", path.display()))?;
    }

    let records = parse_trace(&trace).context("re-reading the trace")?;
    let violations = check_all(&records);
    for v in &violations {
        warn!("{v}");
    }
    // Counters only balance once nothing is left in flight.
    let quiescent = summary.pending_events == 0;
    let mut breach = !violations.is_empty() || (quiescent && !summary.counters_reconcile());
    if !violations.is_empty() {
        println!("conformance: {} violation(s)", violations.len());
    }
    if !summary.leak.clean() || summary.flow_errors > 0 {
        warn!("leak check or flow errors failed");
        breach |= args.strict;
    }
    Ok(if breach { BREACH } else { 0 })
}
