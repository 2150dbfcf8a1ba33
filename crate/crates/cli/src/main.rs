//! `rideshare` command-line front end.
//!
//! Flags given on the command line take precedence over the values in the
//! scenario file, which in turn take precedence over built-in defaults.
//!
//! Exit status: 0 on success, 1 when a validation threshold is missed, 2 on a
//! usage, configuration or runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rideshare::config::ScenarioConfig;
use rideshare::experiment::{run_capacity_sweep, run_validation};
use rideshare::network::Network;
use rideshare::sim::init_simulation;

#[derive(Parser)]
#[command(name = "rideshare", version, about = "Traffic simulation with multi-hop ridesharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the scenario `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compare baseline link-flow shares with the observed flows.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
        /// Largest acceptable mean absolute error.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Match rate across unused carpool-capacity levels.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated unused fractions, each in [0, 1].
        #[arg(long, value_delimiter = ',', value_parser = parse_level)]
        levels: Option<Vec<f64>>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Simulate one scenario and write its full report.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_level(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("level {v} outside [0, 1]"))
    }
}

struct Loaded {
    cfg: ScenarioConfig,
    network: Network,
    out: PathBuf,
}

fn load(common: &Common) -> Result<Loaded> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let network = cfg.load_network()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir());
    Ok(Loaded { cfg, network, out })
}

/// Write through a sibling temporary file and rename into place.
fn write_atomic(dir: &Path, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> rideshare::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let tmp = dir.join(format!(".{name}.partial"));
    let dest = dir.join(name);
    fs::write(&tmp, &buf).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, &dest).with_context(|| format!("renaming to {}", dest.display()))?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn validate(common: &Common, replications: Option<usize>, threshold: Option<f64>) -> Result<ExitCode> {
    let Loaded { mut cfg, network, out } = load(common)?;
    if let Some(r) = replications {
        cfg.replications = r;
    }
    if let Some(t) = threshold {
        if t.is_nan() || t < 0.0 {
            bail!("threshold must be >= 0");
        }
        cfg.validation_threshold = t;
    }
    let report = run_validation(&cfg, &network, cfg.replications, cfg.seed)?;
    create_dir(&out)?;
    write_atomic(&out, "validation.csv", |b| report.write_table(b))?;
    write_atomic(&out, "validation_summary.csv", |b| report.write_summary(b))?;
    println!(
        "mean error {:.6}, chi-squared {:.4} (critical {:.4}, df {}), reject {}",
        report.mean_error, report.test.statistic, report.test.critical, report.test.df, report.test.reject
    );
    let passed = !report.test.reject && report.mean_error <= cfg.validation_threshold;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn sweep(common: &Common, levels: Option<Vec<f64>>, replications: Option<usize>) -> Result<ExitCode> {
    let Loaded { mut cfg, network, out } = load(common)?;
    if let Some(l) = levels {
        cfg.sweep_levels = l;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    cfg.validate()?;
    let report = run_capacity_sweep(&cfg, &network, &cfg.sweep_levels, cfg.replications, cfg.seed)?;
    create_dir(&out)?;
    write_atomic(&out, "sweep.csv", |b| report.write_table(b))?;
    write_atomic(&out, "sweep_summary.csv", |b| report.write_summary(b))?;
    for row in &report.rows {
        println!(
            "unused {:.2}: match rate {:.4} +/- {:.4} over {} replications",
            row.unused_fraction, row.mean_match_rate, row.std_match_rate, row.replications
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run(common: &Common) -> Result<ExitCode> {
    let Loaded { cfg, network, out } = load(common)?;
    let spec = cfg.demand_spec(&network)?;
    let params = cfg.sim_params();
    let report = init_simulation(&params, &spec, &network, cfg.seed, cfg.unused_fraction)?.run(params.horizon);
    create_dir(&out)?;
    write_atomic(&out, "link_flows.csv", |b| report.write_link_flows(b))?;
    write_atomic(&out, "agents.csv", |b| report.write_agents(b))?;
    write_atomic(&out, "summary.csv", |b| report.write_summary(b))?;
    if cfg.record_trace {
        write_atomic(&out, "trace.csv", |b| report.write_trace(b))?;
    }
    println!(
        "{} agents, {} riders, match rate {:.4}",
        report.agents.len(),
        report.riders(),
        report.match_rate()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Validate { common, replications, threshold } => validate(common, *replications, *threshold),
        Command::Sweep { common, levels, replications } => sweep(common, levels.clone(), *replications),
        Command::Run { common } => run(common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
