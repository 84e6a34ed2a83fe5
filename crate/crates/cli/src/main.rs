use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use regionctl_core::fixtures::{self, GridParams};
use regionctl_core::netmodel::{load_scenario, save_scenario};
use regionctl_core::runner::{
    self, calibrate, compare, format_summary, read_metrics, summarize, write_outputs, Manifest,
    CALIBRATION_FACTORS,
};
use regionctl_core::{RunConfig, Scenario, Strategy};

/// Multi-region traffic simulation with perimeter control and route guidance.
///
/// Log verbosity is read from REGIONCTL_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "regionctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-region MFDs from backpressure-signal runs and write a calibrated scenario.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output scenario file (defaults to overwriting --scenario).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Demand multipliers, comma separated.
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<f64>>,
    },
    /// Run one strategy on one seed.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        stop: StopArgs,
    },
    /// Run several strategies over consecutive seeds and tabulate them.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Strategies, comma separated (default: all five compared strategies).
        #[arg(long, value_delimiter = ',')]
        strategy: Option<Vec<Strategy>>,
        /// First seed; replications use seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        reps: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        stop: StopArgs,
    },
    /// Print the summary table of a previous run or comparison.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a generated scenario file.
    Generate {
        #[arg(long, value_enum)]
        kind: Fixture,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct StopArgs {
    /// Keep simulating past the horizon without new demand until empty.
    #[arg(long)]
    until_cleared: bool,
    /// Hard stop in seconds (default: four horizons).
    #[arg(long)]
    cap: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Corridor,
    Grid,
}

fn load(path: &Path) -> Result<Scenario> {
    load_scenario(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn manifest(command: &str, scenario: &Path, strategies: Vec<Strategy>, seeds: Vec<u64>, stop: &StopArgs) -> Manifest {
    Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        scenario: scenario.display().to_string(),
        strategies,
        seeds,
        until_cleared: stop.until_cleared,
        cap_s: stop.cap,
        files: Vec::new(),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("REGIONCTL_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Calibrate {
            scenario,
            out,
            seed,
            factors,
        } => {
            let mut s = load(&scenario)?;
            let factors = factors.unwrap_or_else(|| CALIBRATION_FACTORS.to_vec());
            if factors.is_empty() {
                bail!("--factors must not be empty");
            }
            let started = Instant::now();
            let report = calibrate(&s, &factors, seed)?;
            for (i, m) in report.model.regions().iter().enumerate() {
                println!(
                    "{:<6} G(N) = {:.4e} N^3 + {:.4e} N^2 + {:.4e} N   N_crit = {:.1}  G(N_crit) = {:.3} veh/s",
                    s.partition.names[i],
                    m.beta3,
                    m.beta2,
                    m.beta1,
                    m.n_crit,
                    m.flow(m.n_crit)
                );
            }
            s.mfd = Some(report.model);
            let dest = out.unwrap_or(scenario);
            save_scenario(&s, &dest)?;
            log::info!("calibrated in {:.1?}", started.elapsed());
            println!("wrote {}", dest.display());
        }
        Command::Run {
            scenario,
            strategy,
            seed,
            out,
            stop,
        } => {
            let s = load(&scenario)?;
            let cfg = RunConfig {
                strategy,
                seed,
                until_cleared: stop.until_cleared,
                cap_s: stop.cap,
            };
            let o = runner::run(&s, &cfg)?;
            let m = manifest("run", &scenario, vec![strategy], vec![seed], &stop);
            write_outputs(&out, std::slice::from_ref(&o), &m)?;
            print!("{}", format_summary(&summarize(&[o.metrics])));
        }
        Command::Compare {
            scenario,
            strategy,
            seed,
            reps,
            out,
            stop,
        } => {
            if reps == 0 {
                bail!("--reps must be at least 1");
            }
            let s = load(&scenario)?;
            let strategies = strategy.unwrap_or_else(|| Strategy::COMPARED.to_vec());
            let seeds: Vec<u64> = (seed..seed + reps).collect();
            let started = Instant::now();
            let outs = compare(&s, &strategies, &seeds, stop.until_cleared, stop.cap)?;
            let m = manifest("compare", &scenario, strategies, seeds, &stop);
            write_outputs(&out, &outs, &m)?;
            let metrics: Vec<_> = outs.into_iter().map(|o| o.metrics).collect();
            print!("{}", format_summary(&summarize(&metrics)));
            log::info!("compared in {:.1?}", started.elapsed());
        }
        Command::Report { out } => {
            let path = out.join("metrics.csv");
            let metrics = read_metrics(&path).with_context(|| format!("reading {}", path.display()))?;
            print!("{}", format_summary(&summarize(&metrics)));
        }
        Command::Generate { kind, out, seed } => {
            let mut file = match kind {
                Fixture::Corridor => fixtures::corridor_file(),
                Fixture::Grid => fixtures::grid_file(&GridParams::default()),
            };
            if let Some(seed) = seed {
                file.demand.seed = seed;
            }
            let s = Scenario::from_file(&file)?;
            save_scenario(&s, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
