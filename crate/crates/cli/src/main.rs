use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use noloco_core::harness::{
    analyze, batch_size_sweep, compare, run_experiment, write_json, ExperimentConfig,
};
use noloco_core::latency::{compare_wallclock, FleetSpec, LatencyModel};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "noloco", version, about = "Decentralized training simulator and analysis tools")]
struct Cli {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path. JSON reports go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics (JSONL plus a CSV sidecar).
    Train,
    /// Closed-form predictions for a quadratic NoLoCo config.
    Analyze,
    /// Blocking-overhead simulation of global vs pairwise barriers.
    Latency {
        #[arg(long, default_value_t = 1024)]
        world: usize,
        #[arg(long, default_value_t = 100)]
        inner_steps: usize,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 0.5)]
        sigma2: f64,
        #[arg(long, default_value_t = 500)]
        outer_steps: usize,
    },
    /// Run NoLoCo, DiLoCo and synchronous data parallel on the same setup.
    Compare,
    /// Final validation loss per method over a parameter grid.
    Sweep {
        #[arg(long, value_parser = ["batch_size"])]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<noloco_core::Error> for Failure {
    fn from(e: noloco_core::Error) -> Self {
        if e.is_config_error() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

#[derive(Serialize)]
struct LatencyRow {
    world_size: usize,
    inner_steps: usize,
    outer_steps: usize,
    mu: f64,
    sigma2: f64,
    seed: u64,
    diloco_total: f64,
    noloco_total: f64,
    ratio: f64,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| match e {
            noloco_core::Error::Io { .. } => Failure::Usage(e.to_string()),
            other => other.into(),
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn emit<T: Serialize>(cli: &Cli, value: &T) -> Result<(), Failure> {
    match &cli.out {
        Some(path) => {
            write_json(path, value)?;
            note(cli, &format!("wrote {}", path.display()));
        }
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}

fn note(cli: &Cli, msg: &str) {
    if !cli.quiet {
        eprintln!("{msg}");
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train => {
            let cfg = load_config(cli)?;
            let out = cli.out.as_deref().unwrap_or(Path::new("metrics.jsonl"));
            let records = run_experiment(&cfg, out)?;
            if let Some(last) = records.last() {
                note(
                    cli,
                    &format!(
                        "wrote {} records to {} (step {}, val_loss {:.6})",
                        records.len(),
                        out.display(),
                        last.step,
                        last.val_loss
                    ),
                );
            }
        }
        Command::Analyze => emit(cli, &analyze(&load_config(cli)?)?)?,
        Command::Latency {
            world,
            inner_steps,
            mu,
            sigma2,
            outer_steps,
        } => {
            let model = LatencyModel::new(*mu, *sigma2)?;
            let mut fleet = FleetSpec::new(*world, *inner_steps, *outer_steps)?;
            fleet.step_latency = model;
            fleet.message_latency = model;
            fleet.validate()?;
            let seed = cli.seed.unwrap_or(0);
            let result = compare_wallclock(&fleet, seed)?;
            emit(
                cli,
                &LatencyRow {
                    world_size: *world,
                    inner_steps: *inner_steps,
                    outer_steps: *outer_steps,
                    mu: *mu,
                    sigma2: *sigma2,
                    seed,
                    diloco_total: result.diloco_total,
                    noloco_total: result.noloco_total,
                    ratio: result.ratio,
                },
            )?;
        }
        Command::Compare => emit(cli, &compare(&load_config(cli)?)?)?,
        Command::Sweep { param: _, values } => {
            emit(cli, &batch_size_sweep(&load_config(cli)?, values)?)?
        }
    }
    Ok(())
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
