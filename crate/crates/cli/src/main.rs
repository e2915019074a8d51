use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ridetrace_core::config::{env_name, ScenarioConfig, ENV_PREFIX};
use ridetrace_core::eval::experiment::{self, run_dir};
use serde::Serialize;

const AFTER_HELP: &str = "\
Settings come from built-in defaults, then --config, then environment
variables named RIDETRACE_ plus the upper-cased key with dots replaced by
underscores (grid.rows -> RIDETRACE_GRID_ROWS), then --seed.

Exit codes: 0 success, 2 configuration error, 3 data error.";

#[derive(Parser)]
#[command(name = "ridetrace", version, about = "Ridesourcing car detection from GPS trajectories", after_help = AFTER_HELP)]
struct Cli {
    /// key = value settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overrides the configured one
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Parent directory of run directories
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the source (taxi, bus) and target (car) fleets
    Simulate,
    /// Extract shared features, trajectory images and the held-out split
    Extract,
    /// Train the source forest and seed the target label pool
    Stage1,
    /// Co-train the forest and CNN views on the target pool
    Cotrain,
    /// Score every target car with the trained models
    Classify,
    /// Compute held-out metrics and write report.json
    Evaluate {
        /// Also train single-view self-training baselines
        #[arg(long)]
        self_train: bool,
    },
    /// Leave-one-feature-group-out evaluation of the source forest
    Ablate,
    /// Source forest quality under degraded taxi traces
    NoiseSweep,
    /// Run simulate through evaluate in one go
    Run,
    /// Print the effective settings and the run directory
    ShowConfig,
}

fn print_json<T: Serialize>(value: &T) -> ridetrace_core::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(cli: &Cli) -> ridetrace_core::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn dispatch(cmd: &Command, cfg: &ScenarioConfig, out: &Path) -> ridetrace_core::Result<()> {
    let dir = run_dir(out, cfg);
    match cmd {
        Command::Simulate => print_json(&experiment::simulate(cfg, &dir)?),
        Command::Extract => print_json(&experiment::extract(cfg, &dir)?),
        Command::Stage1 => print_json(&experiment::stage1(cfg, &dir)?),
        Command::Cotrain => print_json(&experiment::cotrain_stage(cfg, &dir)?),
        Command::Classify => {
            let n = experiment::classify(cfg, &dir)?;
            println!("scored {n} cars into {}", dir.join("scores.csv").display());
            Ok(())
        }
        Command::Evaluate { self_train } => {
            print_json(&experiment::evaluate(cfg, &dir, *self_train)?)
        }
        Command::Ablate => print_json(&experiment::ablate(cfg, &dir)?),
        Command::NoiseSweep => print_json(&experiment::noise_sweep(cfg, &dir)?),
        Command::Run => {
            let outcome = experiment::run_experiment(cfg, out)?;
            print_json(&outcome.report)?;
            eprintln!("artifacts in {}", outcome.dir.display());
            Ok(())
        }
        Command::ShowConfig => unreachable!(),
    }
}

fn show_config(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    print!("{}", cfg.canonical());
    println!("# hash {}", cfg.hash());
    println!("# run directory {}", run_dir(out, cfg).display());
    println!("# environment prefix {ENV_PREFIX}, e.g. {}", env_name("grid.rows"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::ShowConfig => show_config(&cfg, &cli.out),
        cmd => dispatch(cmd, &cfg, &cli.out).context("ridetrace failed"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .downcast_ref::<ridetrace_core::Error>()
                .is_some_and(ridetrace_core::Error::is_config);
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}
