use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metaspde::cli::{parse_config, run_pipeline, Format, Mode};
use metaspde::error::Error;

#[derive(Parser)]
#[command(name = "metaspde", version, about = "Transition-time analysis for stochastic Allen-Cahn equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stationary points, Morse indices and determinants.
    Analyze(Args),
    /// Analysis plus Eyring-Kramers transition-time predictions.
    Predict(Args),
    /// Monte Carlo estimates of mean transition times.
    Simulate(Args),
    /// Prediction, simulation, Arrhenius fit and exponential-law test with a verdict.
    Validate(Args),
    /// Functional-determinant cross-check across the grid sizes.
    Detratio(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Overrides `simulate.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(mode: Mode, args: Args) -> Result<ExitCode, (i32, String)> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| (2, format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| (2, e.to_string()))?;
    if let Some(seed) = args.seed {
        cfg.simulate.seed = seed;
    }
    // output overrides stay out of the echoed configuration
    let format = args.format.unwrap_or(cfg.output.format);
    let path = args.output.or_else(|| cfg.output.path.clone());

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err((2, Error::InvalidArgument("--jobs must be at least 1".into()).to_string()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| (3, format!("cannot start worker pool: {e}")))?;
    let report = pool
        .install(|| run_pipeline(&cfg, mode))
        .map_err(|e| (e.exit_code(), e.to_string()))?;

    let text = report.render(format);
    match &path {
        Some(path) => std::fs::write(path, text).map_err(|e| (2, format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    match &report.verdict {
        Some(v) if !v.passed => {
            for c in v.checks.iter().filter(|c| !c.passed) {
                eprintln!("check `{}` failed at n = {}: {} vs {}", c.name, c.n, c.value, c.reference);
            }
            Ok(ExitCode::from(4))
        }
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Analyze(a) => (Mode::Analyze, a),
        Command::Predict(a) => (Mode::Predict, a),
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Validate(a) => (Mode::Validate, a),
        Command::Detratio(a) => (Mode::Detratio, a),
    };
    match run(mode, args) {
        Ok(code) => code,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
