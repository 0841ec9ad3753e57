use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use platoon_vdsa::experiment::{run_matrix_with, summary_rows, write_batch, RunRecord};
use platoon_vdsa::metrics::PrrKind;
use platoon_vdsa::reproduce::{evaluate, reference_strategies, Mode};
use platoon_vdsa::scenario::{SimConfig, Strategy};
use platoon_vdsa::sim::RunOptions;

mod config;
mod manifest;
mod seeds;

/// Platoon VDSA simulator: TVWS channel selection for vehicle platoons.
#[derive(Debug, Parser)]
#[command(name = "vdsa-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a strategy × seed matrix and write metrics.
    Run(RunArgs),
    /// Run the reference matrix and check the expected result families.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML scenario; the built-in default when omitted.
    #[arg(long, env = "VDSA_CONFIG")]
    config: Option<PathBuf>,

    /// Config override, `dotted.path=value` (TOML value syntax). Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE", env = "VDSA_SET", value_delimiter = ';')]
    overrides: Vec<String>,

    /// Seed list: `1..20`, `3`, `1,4,9` or a mix.
    #[arg(long, env = "VDSA_SEEDS")]
    seeds: Option<String>,

    /// Parallel simulations.
    #[arg(long, env = "VDSA_JOBS")]
    jobs: Option<usize>,

    /// Parent directory of the run-stamped output directory.
    #[arg(long, env = "VDSA_OUT", default_value = "out")]
    out: PathBuf,

    /// Leader messages counted in the PRR: cam, cacc or both.
    #[arg(long, env = "VDSA_PRR_KIND", default_value = "both")]
    prr_kind: PrrKind,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,

    /// Comma-separated strategies: cch-only, fixed-tvws, bumblebee:<cost_db>.
    #[arg(
        long,
        env = "VDSA_STRATEGY",
        value_delimiter = ',',
        default_value = "cch-only,fixed-tvws,bumblebee:0,bumblebee:3,bumblebee:6"
    )]
    strategy: Vec<Strategy>,

    /// Write per-run vehicle trajectories every this many ticks.
    #[arg(long, env = "VDSA_TRAJECTORY_STRIDE", value_name = "TICKS")]
    trajectory_stride: Option<u64>,

    /// Print the effective scenario as TOML and exit.
    #[arg(long)]
    print_default_config: bool,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    #[command(flatten)]
    common: Common,

    /// Three seeds and wider tolerances.
    #[arg(long, env = "VDSA_QUICK")]
    quick: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Reproduce(args) => cmd_reproduce(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn jobs(requested: Option<usize>) -> usize {
    requested
        .filter(|&j| j > 0)
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
}

fn load(common: &Common) -> Result<SimConfig> {
    config::load(common.config.as_deref(), &common.overrides)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = load(&args.common)?;
    if args.print_default_config {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    if args.strategy.is_empty() {
        bail!("no strategy given");
    }
    let seeds = match &args.common.seeds {
        Some(s) => seeds::parse(s)?,
        None => vec![cfg.seed],
    };
    let dir = manifest::stamped_dir(&args.common.out)?;
    let opts = RunOptions {
        trajectory_stride_ticks: args.trajectory_stride,
    };
    let records = run_matrix_with(
        &cfg,
        &args.strategy,
        &seeds,
        jobs(args.common.jobs),
        args.common.prr_kind,
        opts,
    )?;
    finish(&dir, &cfg, &records, args.common.prr_kind)?;
    print_summary(&records);
    println!("outputs written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<ExitCode> {
    let cfg = load(&args.common)?;
    let mode = if args.quick { Mode::Quick } else { Mode::Full };
    let seeds = match &args.common.seeds {
        Some(s) => seeds::parse(s)?,
        None => mode.default_seeds(),
    };
    let dir = manifest::stamped_dir(&args.common.out)?;
    let jobs = jobs(args.common.jobs);
    let kind = args.common.prr_kind;
    let records = run_matrix_with(
        &cfg,
        &reference_strategies(),
        &seeds,
        jobs,
        kind,
        RunOptions::default(),
    )?;
    finish(&dir, &cfg, &records, kind)?;
    let report = evaluate(&cfg, &records, &seeds, mode, jobs, kind)?;
    let text = report.to_string();
    println!("{text}");
    let path = dir.join("report.txt");
    std::fs::write(&path, format!("{text}\n"))
        .with_context(|| format!("writing {}", path.display()))?;
    println!("outputs written to {}", dir.display());
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn finish(dir: &Path, cfg: &SimConfig, records: &[RunRecord], kind: PrrKind) -> Result<()> {
    let files = write_batch(dir, records)
        .with_context(|| format!("writing outputs under {}", dir.display()))?;
    manifest::write(dir, cfg, records, &files, kind)
}

fn print_summary(records: &[RunRecord]) {
    let summaries: Vec<_> = records.iter().map(|r| r.summary.clone()).collect();
    println!(
        "{:<16} {:>5} {:>14} {:>14} {:>12}",
        "strategy", "runs", "tail PRR", "switches", "SIR<target"
    );
    for row in summary_rows(&summaries) {
        println!(
            "{:<16} {:>5} {:>7.4}±{:<6.4} {:>7.2}±{:<6.2} {:>12}",
            row.strategy,
            row.runs,
            row.tail_prr_mean,
            row.tail_prr_ci95,
            row.switches_mean,
            row.switches_ci95,
            row.sir_below_target
                .map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
        );
    }
}
