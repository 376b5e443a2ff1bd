mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use error::UsageError;

#[derive(Debug, Parser)]
#[command(name = "delaycast", version, about = "Delay-corrected nowcasts and forecasts of stratified case counts")]
struct Cli {
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for bootstrap and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge daily snapshots into a triangle cache and summarize delays.
    Ingest(IngestArgs),
    /// Fit a model on the window before the anchor date.
    Fit(FitArgs),
    /// Nowcasts, forecasts and forenowcasts with bootstrap intervals.
    Predict(PredictArgs),
    /// Rolling retrospective evaluation over several anchors.
    Evaluate(EvaluateArgs),
    /// Simulate a snapshot archive with known truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory of snapshot CSV files.
    #[arg(long)]
    snapshots: Option<PathBuf>,
    /// District frame CSV.
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Day of analysis; defaults to the latest snapshot.
    #[arg(long)]
    anchor: Option<NaiveDate>,
    /// Negative increments: clamp or reject.
    #[arg(long)]
    policy: Option<commands::Policy>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Triangle cache to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Triangle cache from `ingest`, instead of --snapshots.
    #[arg(long)]
    triangle: Option<PathBuf>,
    /// Model variant; sets the four term flags.
    #[arg(long)]
    variant: Option<String>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the design matrix as CSV.
    #[arg(long)]
    design_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    triangle: Option<PathBuf>,
    /// Model file from `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated: nowcast, forecast, forenowcast, incidence.
    #[arg(long, default_value = "nowcast,forecast,forenowcast,incidence")]
    kind: String,
    /// Days per weekly target.
    #[arg(short, long, default_value_t = 7)]
    k: usize,
    /// Bootstrap replicates; defaults to the model's setting.
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Predictions CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write district points with predictions as GeoJSON.
    #[arg(long)]
    geojson: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated anchor dates.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    anchors: Option<String>,
    /// First anchor of a regular sequence.
    #[arg(long, requires = "to")]
    from: Option<NaiveDate>,
    #[arg(long, requires = "from")]
    to: Option<NaiveDate>,
    /// Days between anchors.
    #[arg(long, default_value_t = 7)]
    step: usize,
    /// Comma-separated variant names, or `all`.
    #[arg(long)]
    variants: Option<String>,
    #[arg(short, long, default_value_t = 7)]
    k: usize,
    /// Bootstrap replicates for interval coverage; point predictions only if absent.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.csv, rpe.csv and skipped.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario file (JSON); flags below override it.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// stationary, growth_plateau or second_wave.
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    districts: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for snapshots/, frame.csv, truth.csv and scenario.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads == 0 {
        return Err(UsageError("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    let config = match &cli.config {
        Some(p) => config::Config::load(p)?,
        None => config::Config::default(),
    };
    match cli.command {
        Command::Ingest(a) => commands::ingest(&config, a),
        Command::Fit(a) => commands::fit(&config, a),
        Command::Predict(a) => commands::predict(&config, a),
        Command::Evaluate(a) => commands::evaluate(&config, a),
        Command::Simulate(a) => commands::simulate(&config, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = error::exit_code(&e);
            eprintln!("error[{}]: {e}", error::category(code));
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(code as u8)
        }
    }
}
