use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use revspam::corpus::ErrorPolicy;
use revspam::error::ExitClass;
use revspam::pipeline::{self, PipelineConfig};
use revspam::synth::{self, SynthSpec};
use revspam::Error;

/// Spam review detection: prepare → train → evaluate → analyze → report.
#[derive(Debug, Parser)]
#[command(name = "revspam", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Input corpus (JSON lines, optionally gzip-compressed).
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,

    /// Output directory for all stage artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Seed for splitting and model training.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// What to do with unparseable input lines.
    #[arg(long, global = true, value_name = "POLICY", value_parser = ["skip", "abort"])]
    on_error: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest, clean and split the corpus.
    Prepare,
    /// Fit features on the training split and train the configured models.
    Train,
    /// Score trained models on the test split.
    Evaluate,
    /// Monthly review volume, reviewer segments and feature correlations.
    Analyze,
    /// Aggregate all stage outputs into report.json.
    Report,
    /// Run every stage in order.
    Run,
    /// Write a synthetic labeled corpus.
    Generate {
        /// Destination JSON-lines file.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Number of reviews.
        #[arg(long, default_value_t = 20_000)]
        reviews: usize,
        /// Expected fraction of spam reviews.
        #[arg(long, default_value_t = 0.4)]
        spam_fraction: f64,
        /// Fraction of labels flipped after generation.
        #[arg(long, default_value_t = 0.03)]
        label_noise: f64,
    },
}

fn resolve_config(args: &GlobalArgs) -> Result<PipelineConfig, Error> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(input) = &args.input {
        config.input_path = Some(input.clone());
    }
    if let Some(output) = &args.output {
        config.output_dir = output.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(policy) = &args.on_error {
        config.on_error = policy.parse::<ErrorPolicy>().map_err(Error::Config)?;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::Generate {
        out,
        reviews,
        spam_fraction,
        label_noise,
    } = &cli.command
    {
        for (name, v) in [("spam-fraction", spam_fraction), ("label-noise", label_noise)] {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Config(format!("--{name} must lie in [0, 1], got {v}")));
            }
        }
        let spec = SynthSpec {
            n_reviews: *reviews,
            spam_fraction: *spam_fraction,
            label_noise: *label_noise,
            seed: cli.global.seed.unwrap_or(SynthSpec::default().seed),
        };
        synth::write_jsonl(&synth::generate(&spec), out)?;
        println!("generated {reviews} reviews -> {}", out.display());
        return Ok(());
    }

    let config = resolve_config(&cli.global)?;
    let layout = pipeline::Layout::new(&config.output_dir);
    match cli.command {
        Command::Prepare => {
            let s = pipeline::run_prepare(&config)?;
            println!(
                "prepare: read {} lines, kept {} (null {}, duplicate {}, malformed {}); train {}, test {} -> {}",
                s.stats.total_read,
                s.stats.kept,
                s.stats.dropped_null,
                s.stats.dropped_duplicate,
                s.stats.dropped_malformed,
                s.train_rows,
                s.test_rows,
                layout.prepare_dir().display()
            );
        }
        Command::Train => {
            let s = pipeline::run_train(&config)?;
            println!(
                "train: {} rows x {} features; models: {} -> {}",
                s.train_rows,
                s.dimension,
                s.models.iter().map(|m| m.model.key()).collect::<Vec<_>>().join(", "),
                layout.train_dir().display()
            );
        }
        Command::Evaluate => {
            let e = pipeline::run_evaluate(&config)?;
            print!("{}", e.comparison.to_csv_string());
        }
        Command::Analyze => {
            let s = pipeline::run_analyze(&config)?;
            println!(
                "analyze: {} records, {} months, {} reviewers -> {}",
                s.records,
                s.months,
                s.distinct_reviewers,
                layout.analyze_dir().display()
            );
        }
        Command::Report => {
            pipeline::run_report(&config)?;
            println!("report -> {}", layout.report().display());
        }
        Command::Run => {
            pipeline::run_all(&config)?;
            println!("report -> {}", layout.report().display());
        }
        Command::Generate { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => ExitClass::Usage as u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class() as u8)
        }
    }
}
