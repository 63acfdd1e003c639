use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use printid::{GaborMode, PipelineConfig, Split};

mod commands;

#[derive(Parser)]
#[command(name = "printid", about = "Identify the source printer of scanned text pages")]
struct Cli {
    /// Worker threads for page-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pages from virtual printers.
    Synth(SynthArgs),
    /// Extract pooled feature vectors from the pages of a manifest.
    Extract(ExtractArgs),
    /// Train a classifier on a feature file.
    Train(TrainArgs),
    /// Predict the printer of a page image or of a feature file's pages.
    Predict(PredictArgs),
    /// Confusion matrices and accuracy of a model on labelled data.
    Evaluate(EvaluateArgs),
    /// Letter boxes and region maps of pages.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GaborArg {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Unassigned,
    All,
}

impl SplitArg {
    fn filter(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::Unassigned => Some(Split::Unassigned),
            SplitArg::All => None,
        }
    }
}

/// Pipeline configuration: an optional TOML file, then flag overrides.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    crop_fraction: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Letters pooled per sample.
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long, value_enum)]
    gabor: Option<GaborArg>,
    #[arg(long)]
    min_region_pixels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// SVM soft-margin penalty.
    #[arg(long = "svm-c")]
    svm_c: Option<f64>,
    /// SVM convergence tolerance.
    #[arg(long = "svm-tol")]
    svm_tol: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> printid::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.crop_fraction {
            cfg.crop_fraction = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.group_size {
            cfg.group_size = v;
        }
        if let Some(v) = self.gabor {
            cfg.gabor_mode = match v {
                GaborArg::On => GaborMode::On,
                GaborArg::Off => GaborMode::Off,
            };
        }
        if let Some(v) = self.min_region_pixels {
            cfg.min_region_pixels = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.svm_c {
            cfg.classifier.c = v;
        }
        if let Some(v) = self.svm_tol {
            cfg.classifier.tol = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Default,
    SameModel,
}

#[derive(Args)]
struct SynthArgs {
    /// Printer profiles (TOML `[[profile]]` tables); overrides --suite.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    suite: Suite,
    #[arg(long, default_value_t = 6)]
    pages_per_printer: usize,
    #[arg(long, default_value_t = 200)]
    letters_per_page: usize,
    /// Pages per printer assigned to the training split.
    #[arg(long, default_value_t = 1)]
    train_pages: usize,
    /// Rotate every test page by this many degrees.
    #[arg(long, default_value_t = 0.0)]
    rotate_test: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// A page image.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    image: Option<PathBuf>,
    /// A feature file; every page in it is predicted.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Also write predictions as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    features: Option<PathBuf>,
    /// Extract features from these pages first, with the model's config.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Directory for confusion matrices and the accuracy summary.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    image: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Write a false-colour region map per segmented letter.
    #[arg(long)]
    regions: bool,
}

fn version() -> String {
    format!(
        "{} (feature format v{}, model format v{})",
        printid::artifact::TOOL_VERSION,
        printid::features::FEATURE_FORMAT_VERSION,
        printid::classifier::MODEL_FORMAT_VERSION
    )
}

/// Exit status for an error chain: 3 for bad input or configuration, 4 for
/// i/o, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use printid::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parameter { .. } | E::Validation(_) | E::Format(_) => 3,
                E::Io { .. } => 4,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let matches = Cli::command().version(version()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
