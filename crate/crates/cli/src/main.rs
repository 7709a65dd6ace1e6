//! `ruled`: runs a verification command from a JSON config and writes CSV
//! and JSON artifacts.
//!
//! Exit codes: 0 when every gate passes, 1 on a gate failure or a numerical
//! error, 2 on a usage or config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ruled_core::config::RunConfig;
use ruled_core::report::{aggregate, RunReport};
use ruled_core::suite::run_command;
use ruled_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Scalar-curvature, contraction and Laplacian expansion sweeps.
    VerifyExpansion,
    /// Fiber averages against the base invariants.
    FiberAverage,
    /// Linearization and first-variation checks.
    LinearizeCheck,
    /// Order-two approximate solution.
    ApproxBuild,
    /// Reduced fixed-point solve against the Calabi profile.
    ExtremalSolve,
    /// Hermitian-Einstein metric by conformal changes.
    HeSolve,
    /// Moment-map checks.
    MomentMap,
    /// Aggregates the reports found in the output directory.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::VerifyExpansion => "verify-expansion",
            Command::FiberAverage => "fiber-average",
            Command::LinearizeCheck => "linearize-check",
            Command::ApproxBuild => "approx-build",
            Command::ExtremalSolve => "extremal-solve",
            Command::HeSolve => "he-solve",
            Command::MomentMap => "moment-map",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ruled", version, about = "Verification runs for extremal metrics on ruled manifolds")]
struct Cli {
    /// Command to run.
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for sampled points (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| format!("{}: {e}", cli.config.display()))?;
    let mut cfg = RunConfig::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn print_report(rep: &RunReport) {
    println!("{} [{}] seed={}", rep.command, rep.example, rep.seed);
    for g in &rep.gates {
        println!("  {}", g.line());
    }
}

fn run(cli: &Cli, cfg: &RunConfig, out: &Path) -> Result<bool, Error> {
    if cli.command == Command::Report {
        let (table, ok) = aggregate(out)?;
        let mut rep = RunReport::new("report", &cfg.example, cfg.seed);
        for row in &table.rows {
            println!("{}", row.join(" "));
        }
        rep.tables.push(table);
        rep.write(out)?;
        return Ok(ok);
    }
    let rep = run_command(cli.command.name(), cfg)?;
    print_report(&rep);
    rep.write(out)?;
    Ok(rep.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match run(&cli, &cfg, &out) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gate failure; artifacts in {}", out.display());
            ExitCode::from(1)
        }
        Err(Error::InvalidInput(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
