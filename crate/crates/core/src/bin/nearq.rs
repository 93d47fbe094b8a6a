use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nearq::harness::{run, ConfigOverrides, Experiment, RunConfig};
use nearq::AdmissibilityMode;

#[derive(Parser)]
#[command(
    name = "nearq",
    version,
    about = "Backward and near-equivalent Q-learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-stage binary treatment: blip surface and band statistics.
    Itr(Common),
    /// Six-month chemotherapy model: policies, baselines, bands, timings.
    Cancer(Common),
    /// Tabular check of backward Q-learning against dynamic programming.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Repeatable.
    #[arg(long = "epsilon")]
    epsilons: Vec<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<AdmissibilityMode>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file with the same keys; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
    #[arg(long, hide = true)]
    oracle_horizon: Option<usize>,
    #[arg(long, hide = true)]
    corrupt: bool,
}

fn parse_mode(s: &str) -> Result<AdmissibilityMode, String> {
    s.parse().map_err(|e: nearq::Error| e.to_string())
}

fn config(experiment: Experiment, c: Common) -> nearq::Result<RunConfig> {
    let file = match &c.config {
        Some(p) => ConfigOverrides::from_toml_file(p)?,
        None => ConfigOverrides::default(),
    };
    let cli = ConfigOverrides {
        seed: c.seed,
        n_train: c.n_train,
        n_test: c.n_test,
        epsilons: (!c.epsilons.is_empty()).then_some(c.epsilons),
        mode: c.mode,
        out: c.out,
        dry_run: c.dry_run.then_some(true),
        oracle_horizon: c.oracle_horizon,
        corrupt: c.corrupt.then_some(true),
        ..Default::default()
    };
    Ok(RunConfig::defaults(experiment).with_overrides(file.merge(cli)))
}

fn main() -> ExitCode {
    let (experiment, common) = match Cli::parse().command {
        Command::Itr(c) => (Experiment::Itr, c),
        Command::Cancer(c) => (Experiment::Cancer, c),
        Command::Oracle(c) => (Experiment::Oracle, c),
    };
    let result = config(experiment, common).and_then(|cfg| {
        let summary = run(&cfg)?;
        if cfg.dry_run {
            println!("config ok: {cfg:?}");
        } else {
            println!("wrote {} artifacts to {}", summary.artifacts.len(), cfg.out.display());
            for (k, v) in &summary.metadata {
                println!("  {k} = {v}");
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
