use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use remer_core::learner::BatchLog;
use remer_lab::config::{parse_seeds, Mode};
use remer_lab::error::{LabError, Result};
use remer_lab::repro::{self, Report};
use remer_lab::runner::{run_experiment, run_learner, write_outputs};
use remer_lab::ExperimentConfig;

#[derive(Parser)]
#[command(name = "remer", version, about = "Tabular replay-weighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config over its seeds and write `<id>.csv` and `<id>.manifest`.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed list overriding `run.seeds`, e.g. `0..10`, `0..=9` or `1,4,7`.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Fill the `wall_ms` column.
        #[arg(long)]
        record_timing: bool,
    },
    /// Parse a config and print its resolved form.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a canned experiment and print its checks.
    Repro {
        recipe: Recipe,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Recurring probability of the softmax policy along training.
    Recurrence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write the final buffer, Q, Δ and κ tables of one Q-learning run.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Recipe {
    #[value(name = "fig1")]
    ChainVi,
    GridworldTce,
    Noise,
    HCorrelation,
    HVariance,
}

fn seeds_for(cfg: &ExperimentConfig, flag: Option<&str>) -> Result<Vec<u64>> {
    match flag {
        Some(text) => parse_seeds(text).map_err(|e| LabError::Config(format!("--seeds: {e}"))),
        None => Ok(cfg.seeds.clone()),
    }
}

fn print_report(report: &Report) {
    print!("{}", report.summary());
    for f in &report.files {
        println!("wrote {}", f.display());
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            jobs,
            record_timing,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            cfg.record_timing |= record_timing;
            let seeds = seeds_for(&cfg, seeds.as_deref())?;
            let rows = run_experiment(&cfg, &seeds, jobs)?;
            let written = write_outputs(&cfg, &seeds, &rows, &out)?;
            println!("wrote {}", written.metrics.display());
            println!("wrote {}", written.manifest.display());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            print!("{}", cfg.echo());
        }
        Command::Repro { recipe, out, jobs } => {
            let out = out.as_deref();
            let report = match recipe {
                Recipe::ChainVi => repro::chain_vi(out)?,
                Recipe::GridworldTce => repro::gridworld_tce(out, jobs)?,
                Recipe::Noise => repro::noise(out, jobs)?,
                Recipe::HCorrelation => repro::h_correlation(out, jobs)?,
                Recipe::HVariance => repro::h_variance(out, jobs)?,
            };
            print_report(&report);
        }
        Command::Recurrence {
            config,
            out,
            seeds,
            jobs,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let seeds = seeds_for(&cfg, seeds.as_deref())?;
            print_report(&repro::recurrence(&cfg, &seeds, Some(&out), jobs)?);
        }
        Command::Dump { config, out, seed } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            if cfg.mode != Mode::QLearning {
                return Err(LabError::Config("dump needs learner.mode = q_learning".into()));
            }
            let trace = run_learner(&cfg, seed, &mut |_: &BatchLog<'_>| {})?;
            remer_lab::dump::dump_run(&trace, &out)?;
            println!("wrote dumps to {}", Path::new(&out).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
