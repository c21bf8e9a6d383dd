//! Command-line front end: run experiments, inspect negotiation, and
//! sweep privacy-leakage curves. Log verbosity follows `RUST_LOG`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use shelora::linalg::Matrix;
use shelora::metrics::{leakage_curve, LeakageStrategy};
use shelora::orchestrator::{
    negotiate_only, run_experiment, write_reports, ExperimentConfig, Strategy,
};
use shelora::sensitivity::ChannelScores;

#[derive(Parser)]
#[command(
    name = "shelora",
    version,
    about = "Desk-scale simulator for selective homomorphic encryption in federated LoRA"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a federated experiment and write report files.
    Run(RunArgs),
    /// Build round-zero bids and print the negotiated column set.
    NegotiateOnly(NegotiateArgs),
    /// Print a privacy-leakage curve as CSV.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the configuration's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configuration's strategy.
    #[arg(long, value_parser = Strategy::from_str)]
    strategy: Option<Strategy>,
    /// Directory for the report files.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Args)]
struct NegotiateArgs {
    /// Experiment configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Which column-hiding order to sweep.
    #[arg(long)]
    curve: CurveKind,
    /// Comma-separated encryption ratios, nondecreasing, in [0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    gammas: Vec<f64>,
    /// Weight matrix as CSV ("rows,cols" first line, then row-major
    /// values). A built-in planted matrix is used when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed for the random order and the built-in matrix.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveKind {
    Max,
    Min,
    Random,
}

fn main() -> ExitCode {
    env_logger::init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::NegotiateOnly(args) => negotiate(args),
        Command::Metrics(args) => metrics(args),
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    ExperimentConfig::from_file(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(args: RunArgs) -> Result<(), String> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(strategy) = args.strategy {
        config.strategy = strategy;
    }
    let output = run_experiment(&config).map_err(|e| e.to_string())?;
    write_reports(&args.out, &config, &output).map_err(|e| e.to_string())?;
    if let Some(failure) = output.failure {
        return Err(format!(
            "run aborted after {} rounds: {failure}",
            output.reports.len()
        ));
    }
    let last = output
        .reports
        .last()
        .ok_or_else(|| "no rounds were run".to_string())?;
    println!(
        "completed {} rounds; final loss {:.6e}; reports in {}",
        output.reports.len(),
        last.loss,
        args.out.display()
    );
    Ok(())
}

fn negotiate(args: NegotiateArgs) -> Result<(), String> {
    let config = load_config(&args.config)?;
    let result = negotiate_only(&config).map_err(|e| e.to_string())?;
    let rendered = serde_json::to_string_pretty(&result).map_err(|e| e.to_string())?;
    println!("{rendered}");
    Ok(())
}

fn planted_matrix(seed: u64) -> Matrix {
    let m = 32;
    let n = 64;
    let heavy = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let sigma = if j < heavy { 3.0 } else { 0.3 };
            let z: f64 = rng.sample(StandardNormal);
            w.set(i, j, sigma * z);
        }
    }
    w
}

fn metrics(args: MetricsArgs) -> Result<(), String> {
    let w = match &args.weights {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Matrix::from_csv_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => planted_matrix(args.seed),
    };
    let norms: Vec<f64> = (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| w.get(i, j).powi(2)).sum())
        .collect();
    let scores = ChannelScores::new(norms).map_err(|e| e.to_string())?;
    let strategy = match args.curve {
        CurveKind::Max => LeakageStrategy::Max,
        CurveKind::Min => LeakageStrategy::Min,
        CurveKind::Random => LeakageStrategy::Random { seed: args.seed },
    };
    let curve = leakage_curve(&w, &scores, strategy, &args.gammas).map_err(|e| e.to_string())?;
    println!("gamma,mi_bits");
    for (gamma, estimate) in curve {
        println!("{gamma},{}", estimate.value);
    }
    Ok(())
}
