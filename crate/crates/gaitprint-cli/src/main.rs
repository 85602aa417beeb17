//! `gaitprint`: train and evaluate per-subject walking classifiers from
//! wrist accelerometry.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or artifact error,
//! 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gaitprint::ErrorCategory;
use gaitprint_cli::commands::{
    run_cma, run_evaluate, run_ingest, run_plot, run_synth, run_train, PlotKind,
};
use gaitprint_cli::config::{load_config, Method};

#[derive(Parser)]
#[command(
    name = "gaitprint",
    version,
    about = "Walking identification from high-resolution accelerometry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured method.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Worker threads; 0 keeps the machine default. Overrides GAITPRINT_JOBS.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic walking cohort as one CSV per subject.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for the per-subject CSV files.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Load raw accelerometry and write second-level magnitude frames.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        /// A delimited file or a directory of them.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Frames file to write; .csv writes text, anything else binary.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Optional JSON ingest report.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Train one-vs-rest models on the training side of the split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Frames file from `ingest`.
        #[arg(long, value_name = "FILE")]
        frames: PathBuf,
        /// Models file to write (JSON).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Optional JSON dump of the train/test frame assignment.
        #[arg(long, value_name = "FILE")]
        split_out: Option<PathBuf>,
    },
    /// Score held-out frames and write accuracy reports.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Frames file from `ingest`.
        #[arg(long, value_name = "FILE")]
        frames: PathBuf,
        /// Models file from `train`.
        #[arg(long, value_name = "FILE")]
        models: PathBuf,
        /// Output directory for reports.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Build simultaneous confidence intervals and fingerprint heatmaps.
    Cma {
        #[command(flatten)]
        common: CommonArgs,
        /// Models file from `train` (gridcell method).
        #[arg(long, value_name = "FILE")]
        models: PathBuf,
        /// Output directory for intervals, heatmaps, and the report.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Restrict to one subject; default is every fitted subject.
        #[arg(long)]
        subject: Option<String>,
    },
    /// Rebuild an SVG plot from an existing report artifact.
    Plot {
        /// What to draw.
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Source artifact: sensitivity CSV for curve, fingerprints JSON
        /// for heatmap.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// SVG file to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Subject id for heatmaps when the report holds several.
        #[arg(long)]
        subject: Option<String>,
    },
}

fn init_threads(jobs: Option<usize>) {
    let jobs = jobs.or_else(|| {
        let raw = std::env::var("GAITPRINT_JOBS").ok()?;
        match raw.parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) => {
                log::warn!("ignoring unparsable GAITPRINT_JOBS={raw:?}");
                None
            }
        }
    });
    if let Some(n) = jobs {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("thread pool already initialized: {e}");
            }
        }
    }
}

fn run(cli: Cli) -> gaitprint::Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            init_threads(common.jobs);
            let cfg = load_config(common.config.as_deref(), common.seed, common.method)?;
            run_synth(&cfg, &out)
        }
        Command::Ingest {
            common,
            input,
            out,
            report,
        } => {
            init_threads(common.jobs);
            let cfg = load_config(common.config.as_deref(), common.seed, common.method)?;
            run_ingest(&cfg, &input, &out, report.as_deref())
        }
        Command::Train {
            common,
            frames,
            out,
            split_out,
        } => {
            init_threads(common.jobs);
            let cfg = load_config(common.config.as_deref(), common.seed, common.method)?;
            run_train(&cfg, &frames, &out, split_out.as_deref())
        }
        Command::Evaluate {
            common,
            frames,
            models,
            out,
        } => {
            init_threads(common.jobs);
            let cfg = load_config(common.config.as_deref(), common.seed, common.method)?;
            run_evaluate(&cfg, &frames, &models, &out)
        }
        Command::Cma {
            common,
            models,
            out,
            subject,
        } => {
            init_threads(common.jobs);
            let cfg = load_config(common.config.as_deref(), common.seed, common.method)?;
            run_cma(&cfg, &models, &out, subject.as_deref())
        }
        Command::Plot {
            kind,
            input,
            out,
            subject,
        } => run_plot(kind, &input, &out, subject.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numerical => 4,
            })
        }
    }
}
