use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod plots;

#[derive(Debug, Parser)]
#[command(
    name = "scenerep",
    version,
    about = "Segment indoor scans and replace objects with database exemplars"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the configuration and of the forest.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created when missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the cell classifier on labelled scenes (procedural scenes when none are given).
    TrainForest {
        /// Directory of labelled PLY scenes.
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Sample and cluster database models into an exemplar set.
    BuildExemplars {
        /// Directory of OFF models (procedural database models when omitted).
        #[arg(long)]
        models: Option<PathBuf>,
        /// JSON object mapping model file names to class ids.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate labelled benchmark scenes with ground-truth boxes.
    GenBenchmark {
        /// Directory of held-out OFF models (procedural models when omitted).
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the pipeline on a PLY scene, or on every PLY file of a directory.
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        forest: Option<PathBuf>,
        #[arg(long)]
        exemplars: Option<PathBuf>,
    },
    /// Score placements against scene annotations.
    Evaluate {
        /// Directory holding `<scene>.json` annotations.
        #[arg(long)]
        scenes: PathBuf,
        /// Directory holding `<scene>.placements.json` files.
        #[arg(long)]
        placements: PathBuf,
        #[arg(long)]
        exemplars: Option<PathBuf>,
    },
    /// Render metric tables and energy traces to CSV and SVG.
    Report {
        /// `evaluation.json` written by `evaluate`.
        #[arg(long)]
        evaluation: Option<PathBuf>,
        /// Directory holding `<scene>.trace.json` files written by `transform`.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            commands::print_error("usage", message.trim());
            return ExitCode::from(2);
        }
    };
    let c = &cli.common;
    let result = match cli.command {
        Command::TrainForest { scenes } => commands::train_forest(c, scenes.as_deref()),
        Command::BuildExemplars { models, manifest } => commands::build_exemplars(c, models.as_deref(), manifest.as_deref()),
        Command::GenBenchmark { models, manifest } => commands::gen_benchmark(c, models.as_deref(), manifest.as_deref()),
        Command::Transform { input, forest, exemplars } => commands::transform(c, &input, forest.as_deref(), exemplars.as_deref()),
        Command::Evaluate {
            scenes,
            placements,
            exemplars,
        } => commands::evaluate(c, &scenes, &placements, exemplars.as_deref()),
        Command::Report { evaluation, traces } => commands::report(c, evaluation.as_deref(), traces.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|cause| cause.downcast_ref::<scenerep_core::Error>())
                .map_or("error", |ce| ce.kind());
            commands::print_error(kind, &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
