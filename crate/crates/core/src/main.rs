use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csmacap::harness::{run_experiment, validate_bounds, Experiment, ExperimentConfig};
use csmacap::{Error, Result};

/// Percolation-routing and CSMA experiments for large random wireless networks.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Disjoint open paths per rectangle.
    OpenPaths(RunArgs),
    /// SD lines per square, relay load and hop counts.
    SdLines(RunArgs),
    /// Medium access probability under saturated CSMA.
    Map(RunArgs),
    /// Per-node throughput of saturated flows.
    Throughput(RunArgs),
    /// Minimum received power and derived physical parameters.
    PhySolve(RunArgs),
    /// Re-check a result table against its bounds.
    Validate {
        table: PathBuf,
        #[arg(long)]
        experiment: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output` or `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn sweep(experiment: Experiment, args: RunArgs) -> Result<bool> {
    let text =
        fs::read_to_string(&args.config).map_err(|e| Error::Usage(format!("config {}: {e}", args.config.display())))?;
    let cfg = ExperimentConfig::parse(experiment, &text)?;
    let out = args.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(experiment.name()));
    let outcome = run_experiment(&cfg, Some(&out), args.jobs)?;
    outcome.report.write_text(io::stdout().lock())?;
    if let Some(s) = outcome.scaling {
        println!("scaling slope={s:.4}");
    }
    for f in &outcome.failures {
        eprintln!("cell n={} seed={} failed: {}", f.n, f.seed, f.error);
    }
    println!("results written to {}", out.display());
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::OpenPaths(a) => sweep(Experiment::OpenPaths, a),
        Command::SdLines(a) => sweep(Experiment::SdLines, a),
        Command::Map(a) => sweep(Experiment::Map, a),
        Command::Throughput(a) => sweep(Experiment::Throughput, a),
        Command::PhySolve(a) => sweep(Experiment::PhySolve, a),
        Command::Validate { table, experiment } => (|| {
            let experiment: Experiment = experiment.parse()?;
            let file = fs::File::open(&table).map_err(|e| Error::Usage(format!("table {}: {e}", table.display())))?;
            let report = validate_bounds(file, experiment)?;
            report.write_text(io::stdout().lock())?;
            Ok(report.ok())
        })(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
