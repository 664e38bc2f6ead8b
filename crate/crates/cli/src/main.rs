mod backend;
mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use geobench::harness::{EvalMode, PromptMode};

#[derive(Parser)]
#[command(name = "geobench", version, about = "Image geolocation benchmark toolkit")]
struct Cli {
    /// TOML config file (also read from GEOBENCH_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a benchmark from a candidate pool with area-weighted country sampling.
    Sample(SampleArgs),
    /// Evaluate a backend on a benchmark in DIRE or HIER mode.
    Eval(EvalArgs),
    /// Build clue records or reasoning dialogs.
    Datagen(DatagenArgs),
    /// Run the interactive session HTTP service.
    Serve(ServeArgs),
    /// List, approve or reject clue records.
    Review(ReviewArgs),
    /// Merge run directories into one comparison table.
    Report(ReportArgs),
    /// Re-run a job from its manifest and check the outputs match.
    Replay(ReplayArgs),
}

#[derive(Args)]
pub struct SampleArgs {
    /// CSV with columns name,area_km2.
    #[arg(long)]
    countries: PathBuf,
    /// CSV with columns name,country,lat,lon.
    #[arg(long)]
    cities: PathBuf,
    /// JSONL candidate samples.
    #[arg(long)]
    pool: PathBuf,
    /// Number of samples to select.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    radius_km: Option<f64>,
    /// Maximum samples contributed by any one city.
    #[arg(long)]
    per_city_cap: Option<usize>,
    /// Write what was collected when the draw budget runs out.
    #[arg(long)]
    allow_partial: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Benchmark JSONL (as written by `sample`).
    #[arg(long)]
    benchmark: PathBuf,
    /// dire or hier.
    #[arg(long)]
    mode: EvalMode,
    #[arg(long)]
    backend: Option<String>,
    /// direct, plus_q or plus_qa.
    #[arg(long, default_value = "direct")]
    prompt_mode: PromptMode,
    /// `default` or a template JSON file.
    #[arg(long)]
    templates: Option<String>,
    /// Country/region/city index for HIER. Built from the benchmark when absent.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// JSON object mapping name variants to canonical names.
    #[arg(long)]
    aliases: Option<PathBuf>,
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Score region and city independently of country in DIRE mode.
    #[arg(long)]
    ungated: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, serde::Serialize, serde::Deserialize, PartialEq, Eq, Debug)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Clues,
    Dialogs,
}

#[derive(Args)]
pub struct DatagenArgs {
    pipeline: Pipeline,
    /// JSONL samples to generate for.
    #[arg(long)]
    samples: PathBuf,
    /// Clue list (CSV or JSONL), required for `clues`.
    #[arg(long)]
    clues: Option<PathBuf>,
    /// Countries CSV; clues for other countries are quarantined.
    #[arg(long)]
    known_countries: Option<PathBuf>,
    #[arg(long)]
    backend: Option<String>,
    /// Prompt JSON file replacing the built-in prompts.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Regenerate clue records previously rejected (never approved ones).
    #[arg(long)]
    regenerate_rejected: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    addr: Option<String>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    sessions_dir: Option<PathBuf>,
    #[arg(long)]
    templates: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct ReviewArgs {
    /// Datagen output directory holding clues.jsonl.
    #[arg(long)]
    store: PathBuf,
    #[command(subcommand)]
    action: ReviewAction,
}

#[derive(Subcommand)]
pub enum ReviewAction {
    List {
        /// unreviewed, approved or rejected.
        #[arg(long)]
        status: Option<String>,
    },
    Approve {
        id: String,
    },
    Reject {
        id: String,
        #[arg(long)]
        reason: String,
    },
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directories written by `eval`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// CSV file for the merged table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReplayArgs {
    manifest: PathBuf,
    /// Output location for the re-run; defaults to the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = config::FileConfig::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Sample(a) => commands::sample(a, &file),
        Command::Eval(a) => commands::eval(a, &file),
        Command::Datagen(a) => commands::datagen(a, &file),
        Command::Serve(a) => commands::serve(a, &file),
        Command::Review(a) => commands::review(a),
        Command::Report(a) => commands::report(a),
        Command::Replay(a) => commands::replay(a),
    });
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
