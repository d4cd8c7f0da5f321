use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand as ClapSubcommand};
use ntklab_cli::commands::{execute, Subcommand};
use ntklab_cli::config::{resolve, AssumptionConfig, BenignConfig, ConvergeConfig, MinEigConfig, RiskConfig};
use ntklab_cli::output::RunDir;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "ntklab", version, about = "Neural tangent kernel experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// SGD on a noisy two-cluster mixture; reports training/test error and margin.
    BenignClass(Common),
    /// Smallest NTK eigenvalue against its lower bound over an (n, d) grid.
    MinEigSweep(Common),
    /// Empirical NTK deviation from the limiting kernel across widths.
    NtkConverge(Common),
    /// Same-class versus cross-class kernel mass.
    AssumptionCheck(Common),
    /// Excess risk of ridgeless NTK regression across sample sizes.
    ExcessRiskSweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn resolved(sub: Subcommand, c: &Common) -> Result<Value> {
    let (file, seed, ov) = (c.config.as_deref(), c.seed, c.overrides.as_slice());
    Ok(match sub {
        Subcommand::BenignClass => resolve::<BenignConfig>(file, seed, ov)?.1,
        Subcommand::MinEigSweep => resolve::<MinEigConfig>(file, seed, ov)?.1,
        Subcommand::NtkConverge => resolve::<ConvergeConfig>(file, seed, ov)?.1,
        Subcommand::AssumptionCheck => resolve::<AssumptionConfig>(file, seed, ov)?.1,
        Subcommand::ExcessRiskSweep => resolve::<RiskConfig>(file, seed, ov)?.1,
    })
}

fn run(sub: Subcommand, c: &Common) -> Result<Option<bool>> {
    let config = resolved(sub, c)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(sub.name()));
    let mut dir = RunDir::acquire(&out)?;
    let report = execute(sub, &config, &mut dir)?;
    for (k, v) in &report.metrics {
        println!("{k} = {v}");
    }
    let verdict = match report.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "n/a",
    };
    println!("{}: {verdict} ({})", sub.name(), out.display());
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, common) = match &cli.command {
        Command::BenignClass(c) => (Subcommand::BenignClass, c),
        Command::MinEigSweep(c) => (Subcommand::MinEigSweep, c),
        Command::NtkConverge(c) => (Subcommand::NtkConverge, c),
        Command::AssumptionCheck(c) => (Subcommand::AssumptionCheck, c),
        Command::ExcessRiskSweep(c) => (Subcommand::ExcessRiskSweep, c),
    };
    match run(sub, common) {
        Ok(Some(false)) => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
