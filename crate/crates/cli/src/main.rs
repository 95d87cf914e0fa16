mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::CONFIG_HELP;

#[derive(Debug, Parser)]
#[command(
    name = "graspcheck",
    version,
    about = "Grasp verification: synthetic data, inference, evaluation"
)]
#[command(after_help = CONFIG_HELP)]
struct Cli {
    /// Run configuration (YAML or JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scene specs and a manifest.
    #[command(after_help = CONFIG_HELP)]
    Generate(GenerateArgs),
    /// Run detect, refine, crop and classify over a dataset.
    #[command(after_help = CONFIG_HELP)]
    Infer(InferArgs),
    /// Print detection, classification and precision/recall tables.
    #[command(after_help = CONFIG_HELP)]
    Evaluate(EvaluateArgs),
    /// Ask a vision-language model about every example.
    #[command(after_help = CONFIG_HELP)]
    Vqa(VqaArgs),
    /// Write the bundled real-evaluation fixtures.
    #[command(after_help = CONFIG_HELP)]
    Fixtures(FixturesArgs),
    /// Print the effective configuration.
    #[command(after_help = CONFIG_HELP)]
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory; must be absent or empty.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, short = 'n', default_value_t = 1200)]
    pub num_batches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides gen.batch_size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Overrides gen.p_grasp.
    #[arg(long)]
    pub p_grasp: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Dataset directory or manifest file.
    #[arg(long, short)]
    pub dataset: PathBuf,
    /// Detector candidates: JSON map of image id to detections.
    #[arg(long)]
    pub detector: PathBuf,
    /// Classifier outputs: JSON map of image id to p(NO_OBJECT).
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long, short, default_value = "verdicts.jsonl")]
    pub out: PathBuf,
    /// Overrides decide.threshold_no_object.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory or manifest file; required with --verdicts.
    #[arg(long, short)]
    pub dataset: Option<PathBuf>,
    /// Pipeline verdicts as [NAME=]PATH; repeatable.
    #[arg(long, value_name = "[NAME=]PATH")]
    pub verdicts: Vec<String>,
    /// Evaluation records as [NAME=]PATH; repeatable. A detection table is
    /// printed when some record has a failed detection.
    #[arg(long, value_name = "[NAME=]PATH")]
    pub records: Vec<String>,
    /// Separate records for a model's precision/recall, as NAME=PATH.
    #[arg(long, value_name = "NAME=PATH")]
    pub pr_records: Vec<String>,
    /// Overrides eval.reviews.
    #[arg(long)]
    pub reviews: Option<PathBuf>,
    /// Overrides eval.output.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VqaArgs {
    /// Dataset directory or manifest file.
    #[arg(long, short)]
    pub dataset: PathBuf,
    /// Overrides vqa.replay.
    #[arg(long, conflicts_with = "live")]
    pub replay: Option<PathBuf>,
    /// Query the hosted model configured through the environment.
    #[arg(long)]
    pub live: bool,
    /// Directory for vqa_records.jsonl and vqa_summary.json.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Overrides vqa.parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides vqa.prompt_version.
    #[arg(long)]
    pub prompt_version: Option<String>,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write black placeholder PNGs so the manifest loads with images.
    #[arg(long)]
    pub placeholder_images: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Print JSON instead of YAML.
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = config::RunConfig::resolve(cli.config.as_deref())
        .map_err(commands::CliError::Usage)
        .and_then(|cfg| match cli.command {
            Command::Generate(a) => commands::generate(&cfg, a),
            Command::Infer(a) => commands::infer(&cfg, a),
            Command::Evaluate(a) => commands::evaluate(&cfg, a),
            Command::Vqa(a) => commands::vqa(&cfg, a),
            Command::Fixtures(a) => commands::fixtures(a),
            Command::Config(a) => commands::print_config(&cfg, a),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.inner());
            ExitCode::from(e.code())
        }
    }
}
