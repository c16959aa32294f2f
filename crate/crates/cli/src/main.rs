use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lcnav::pipeline::{Ablation, Pipeline};
use lcnav_cli::{
    cmd_compare, cmd_run, cmd_simulate, cmd_stats, load_scenario_config, CliError, RunConfig,
};

/// Loosely-coupled 5G / IMU / odometer navigation: simulate, run, compare.
#[derive(Debug, Parser)]
#[command(name = "lcnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate truth, sensor streams and 5G measurements for a scenario.
    Simulate {
        /// Scenario TOML file, or `reference` for the shipped scenario.
        #[arg(long)]
        scenario: String,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one pipeline and write estimates, errors and statistics.
    Run {
        /// Simulation directory, scenario TOML file, or `reference`.
        #[arg(long)]
        scenario: String,
        /// One of ins-only, ins-odo, 5g-only-cv, 5g-obms.
        #[arg(long)]
        pipeline: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_bias_removal: bool,
        #[arg(long)]
        no_stop_mechanism: bool,
        #[arg(long)]
        no_odometer: bool,
        /// Reject updates whose NIS exceeds this χ² probability.
        #[arg(long)]
        gate_chi2: Option<f64>,
    },
    /// Tabulate runs made over the same input streams side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the statistics of a run.
    Stats {
        run: PathBuf,
        /// Seconds after each outage included in its window statistics.
        #[arg(long, default_value_t = 0.0)]
        tail: f64,
    },
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            scenario,
            seed,
            out,
        } => {
            let manifest = cmd_simulate(load_scenario_config(&scenario)?, seed, &out)?;
            let durations: Vec<String> = manifest
                .outages
                .iter()
                .map(|o| format!("{} s", o.duration))
                .collect();
            println!(
                "{}: {:.1} s, {} stations, outages [{}], wrote {}",
                manifest.name,
                manifest.duration_s,
                manifest.stations,
                durations.join(", "),
                out.display()
            );
        }
        Command::Run {
            scenario,
            pipeline,
            seed,
            out,
            no_bias_removal,
            no_stop_mechanism,
            no_odometer,
            gate_chi2,
        } => {
            let pipeline: Pipeline = pipeline.parse()?;
            let cfg = RunConfig {
                scenario,
                pipeline,
                ablation: Ablation {
                    bias_removal: !no_bias_removal,
                    stop_mechanism: !no_stop_mechanism,
                    odometer: !no_odometer,
                    gate_chi2,
                },
                out,
                seed,
            };
            let (manifest, stats) = cmd_run(&cfg)?;
            println!(
                "{}: RMS {:.3} m, max {:.3} m, 2σ {:.3} m over {} epochs",
                manifest.label,
                stats.error_3d.rms,
                stats.error_3d.max,
                stats.error_3d.two_sigma,
                manifest.epochs
            );
        }
        Command::Compare { runs, out } => print!("{}", cmd_compare(&runs, &out)?),
        Command::Stats { run, tail } => print!("{}", cmd_stats(&run, tail)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
