//! Command-line front end: `run`, `compare` and `sweep-dt`.
//!
//! Exit codes: 0 on success, 1 for invalid configuration or arguments, 2 for I/O
//! failures.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigFile, KindName};
use crate::error::{Error, Result};
use crate::harness::{compare_strategies, normalize_series, simulate_run, Comparison, SimulationConfig};
use crate::output::{write_daily_csv, write_json, write_pairwise_csv, write_summary_csv, write_text, RunRows};

pub const DAILY_CSV: &str = "daily.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PAIRWISE_CSV: &str = "pairwise.csv";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Parser)]
#[command(name = "gsp-reserve", version, about = "Dynamic reserve prices for GSP sponsored-search auctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one strategy for one seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Strategy to run; defaults to the config's `strategy`.
        #[arg(long)]
        strategy: Option<String>,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several strategies over the same seeds and test them pairwise.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        /// Number of consecutive seeds starting at the config seed.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an MCTS strategy once per reserve update period.
    SweepDt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        dt: Vec<i64>,
        #[arg(long)]
        seeds: Option<usize>,
        /// MCTS strategy to sweep; defaults to the only MCTS entry.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> i32 {
    run_with_args(std::env::args_os())
}

pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            strategy,
            out,
        } => cmd_run(&config, seed, strategy.as_deref(), out.as_deref()),
        Command::Compare {
            config,
            strategies,
            seeds,
            out,
        } => cmd_compare(&config, &strategies, seeds, out.as_deref()),
        Command::SweepDt {
            config,
            dt,
            seeds,
            strategy,
            out,
        } => cmd_sweep_dt(&config, &dt, seeds, strategy.as_deref(), out.as_deref()),
    }
}

fn load(path: &Path) -> Result<ConfigFile> {
    let config = ConfigFile::load(path)?;
    config.validate()?;
    Ok(config)
}

fn output_dir(config: &ConfigFile, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::invalid("no output directory: pass --out or set output_dir"))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    strategy: &'a str,
    seed: u64,
    horizon: u32,
    cumulative_revenue: f64,
    objective: f64,
    final_reserves: &'a [f64],
    baseline: &'a str,
    baseline_converged_revenue: f64,
}

pub fn cmd_run(path: &Path, seed: Option<u64>, strategy: Option<&str>, out: Option<&Path>) -> Result<()> {
    let config = load(path)?;
    let name = match strategy.or(config.strategy.as_deref()) {
        Some(n) => n.to_string(),
        None if config.strategies.len() == 1 => config.strategy_names().remove(0),
        None => return Err(Error::invalid("several strategies defined: pass --strategy or set `strategy`")),
    };
    let seed = seed.unwrap_or(config.seed);
    let sim = config.simulation(&name)?.with_seed(seed);
    let dir = output_dir(&config, out)?;

    let result = simulate_run(&sim)?;
    let baseline_name = config.baseline.clone().unwrap_or_else(|| name.clone());
    let baseline = if baseline_name == name {
        result.clone()
    } else {
        simulate_run(&config.simulation(&baseline_name)?.with_seed(seed))?
    };
    let window = config.normalization_window;
    let normalized = normalize_series(&result.revenues(), &baseline, window)?;
    write_daily_csv(
        &dir.join(DAILY_CSV),
        sim.n_bidders(),
        &[RunRows {
            run_id: 0,
            seed,
            strategy: &name,
            result: &result,
            normalized: &normalized,
        }],
    )?;
    let last = result.days.last().expect("horizon is at least one day");
    write_json(
        &dir.join(SUMMARY_JSON),
        &RunSummary {
            strategy: &name,
            seed,
            horizon: sim.horizon,
            cumulative_revenue: result.cumulative_revenue,
            objective: result.objective,
            final_reserves: last.reserves.as_slice(),
            baseline: &baseline_name,
            baseline_converged_revenue: baseline.tail_mean(window)?,
        },
    )?;
    write_text(&dir.join(EFFECTIVE_CONFIG), &config.effective().to_toml())
}

pub fn cmd_compare(path: &Path, names: &[String], n_seeds: Option<usize>, out: Option<&Path>) -> Result<()> {
    let config = load(path)?;
    check_names(names)?;
    let mut errors = Vec::new();
    let mut configs = Vec::new();
    for name in names {
        match config.simulation(name) {
            Ok(c) => configs.push((name.clone(), c)),
            Err(Error::Config(v)) => errors.extend(v),
            Err(e) => return Err(e),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    let baseline = match &config.baseline {
        Some(b) if !names.contains(b) => {
            return Err(Error::invalid(format!(
                "baseline strategy {b:?} is not among the compared strategies {names:?}"
            )))
        }
        Some(b) => b.clone(),
        None => names[0].clone(),
    };
    run_family(&config, configs, &baseline, n_seeds, out)
}

pub fn cmd_sweep_dt(
    path: &Path,
    dts: &[i64],
    n_seeds: Option<usize>,
    strategy: Option<&str>,
    out: Option<&Path>,
) -> Result<()> {
    let config = load(path)?;
    let mut errors = Vec::new();
    for (i, &dt) in dts.iter().enumerate() {
        if dt <= 0 || dt > u32::MAX as i64 {
            errors.push(format!("dt[{i}] = {dt} must be a positive number of days"));
        }
        if dts[..i].contains(&dt) {
            errors.push(format!("dt[{i}] = {dt} is a duplicate"));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    let name = match strategy {
        Some(s) => s.to_string(),
        None => {
            let mcts: Vec<&String> = config
                .strategies
                .iter()
                .filter(|(_, s)| s.kind == KindName::Mcts)
                .map(|(n, _)| n)
                .collect();
            match (config.strategy.as_ref(), mcts.as_slice()) {
                (Some(s), _) if mcts.contains(&s) => s.clone(),
                (_, [only]) => (*only).clone(),
                _ => return Err(Error::invalid("cannot pick an MCTS strategy: pass --strategy")),
            }
        }
    };
    if config.strategies.get(&name).is_some_and(|s| s.kind != KindName::Mcts) {
        return Err(Error::invalid(format!("strategy {name:?} is not an MCTS strategy")));
    }
    let base = config.simulation(&name)?;
    let mut configs: Vec<(String, SimulationConfig)> = dts
        .iter()
        .map(|&dt| {
            let mut c = base.clone();
            c.strategy.update_period = dt as u32;
            (format!("{name}_dt{dt}"), c)
        })
        .collect();
    let baseline = match &config.baseline {
        Some(b) => {
            configs.push((b.clone(), config.simulation(b)?));
            b.clone()
        }
        None => configs[0].0.clone(),
    };
    run_family(&config, configs, &baseline, n_seeds, out)
}

fn check_names(names: &[String]) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::invalid(format!("strategy {n:?} is listed twice")));
        }
    }
    Ok(())
}

/// Runs every configuration over the seed list, normalizes each run against the
/// baseline run with the same seed and writes the daily, summary and pairwise files.
fn run_family(
    config: &ConfigFile,
    configs: Vec<(String, SimulationConfig)>,
    baseline: &str,
    n_seeds: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    if n_seeds == Some(0) {
        return Err(Error::invalid("--seeds must be at least 1"));
    }
    let seeds = config.seed_list(n_seeds);
    let dir = output_dir(config, out)?;
    let n_bidders = configs[0].1.n_bidders();
    let comparison = compare_strategies(&configs, &seeds)?;
    let window = config.normalization_window;

    let base_runs = comparison.runs_of(baseline).expect("baseline was run");
    let normalized: Vec<Vec<Vec<f64>>> = comparison
        .runs
        .iter()
        .map(|s| {
            s.runs
                .iter()
                .zip(&base_runs.runs)
                .map(|((_, r), (_, b))| normalize_series(&r.revenues(), b, window))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (si, s) in comparison.runs.iter().enumerate() {
        for (ri, (seed, result)) in s.runs.iter().enumerate() {
            rows.push(RunRows {
                run_id: si * seeds.len() + ri,
                seed: *seed,
                strategy: &s.name,
                result,
                normalized: &normalized[si][ri],
            });
        }
    }
    write_daily_csv(&dir.join(DAILY_CSV), n_bidders, &rows)?;

    let final_normalized: Vec<f64> = normalized
        .iter()
        .map(|runs| {
            runs.iter()
                .map(|n| n[n.len() - window..].iter().sum::<f64>() / window as f64)
                .sum::<f64>()
                / runs.len() as f64
        })
        .collect();
    write_summary_csv(&dir.join(SUMMARY_CSV), &comparison.summaries, &final_normalized)?;
    write_pairwise(&dir, &comparison)?;
    write_text(&dir.join(EFFECTIVE_CONFIG), &config.effective().to_toml())
}

fn write_pairwise(dir: &Path, comparison: &Comparison) -> Result<()> {
    let path = dir.join(PAIRWISE_CSV);
    if comparison.pairwise.is_empty() {
        // A stale file from an earlier run would misdescribe this one.
        return match std::fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(&path, e)),
            _ => Ok(()),
        };
    }
    write_pairwise_csv(&path, &comparison.pairwise)
}

