use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use camcim_harness::config::ExperimentConfig;
use camcim_harness::experiments::{
    run_compare, run_equivalence, run_sweep, run_trace, run_variation,
};
use camcim_harness::output::{write_csv, write_lines};
use clap::{ArgAction, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "camcim",
    version,
    about = "FeFET CAM/CIM pruning simulator experiments"
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed list: `0..50`, `0..=49`, `1,2,3` or a single seed.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Increase log verbosity; tracing also records accumulator snapshots.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hardware pipeline against the golden model, per-seed match counts.
    Equivalence,
    /// Area, energy, delay and fidelity over the length grid.
    Sweep,
    /// Ratios against the analytic baseline designs.
    Compare,
    /// Selection and decode quality under threshold-voltage spread.
    Variation,
    /// Per-step JSON lines of one trial.
    Trace,
}

fn run(cli: &Cli) -> Result<Vec<String>> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seeds.is_some() {
        cfg.seeds = cli.seeds.clone();
    }
    let out = cli.out.as_deref();
    let violations = match cli.command {
        Command::Equivalence => {
            let seeds = cfg.seeds_for(&cfg.equivalence.seeds)?;
            let o = run_equivalence(&cfg, &seeds)?;
            let steps: usize = o.rows.iter().map(|r| r.steps).sum();
            let sel: usize = o.rows.iter().map(|r| r.selected_matches).sum();
            let ev: usize = o.rows.iter().map(|r| r.eviction_matches).sum();
            log::info!(
                "{} seeds, {steps} steps: selected sets {sel}/{steps}, evictions {ev}/{steps}",
                o.rows.len()
            );
            write_csv(&o.rows, out)?;
            o.violations
        }
        Command::Sweep => {
            let seeds = cfg.seeds_for(&cfg.sweep.seeds)?;
            let o = run_sweep(&cfg, &seeds)?;
            write_csv(&o.rows, out)?;
            o.violations
        }
        Command::Compare => {
            let o = run_compare(&cfg)?;
            write_csv(&o.rows, out)?;
            o.violations
        }
        Command::Variation => {
            let seeds = cfg.seeds_for(&cfg.variation.seeds)?;
            let o = run_variation(&cfg, &seeds)?;
            write_csv(&o.rows, out)?;
            o.violations
        }
        Command::Trace => {
            let seed = match &cfg.seeds {
                Some(s) => camcim_harness::config::parse_seeds(s)?[0],
                None => cfg.trace_log.seed,
            };
            let (lines, v) = run_trace(&cfg, seed, cli.verbose > 0)?;
            write_lines(&lines, out)?;
            v
        }
    };
    Ok(violations)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(v) if v.is_empty() => ExitCode::SUCCESS,
        Ok(v) => {
            for msg in &v {
                log::error!("{msg}");
                eprintln!("violation: {msg}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
