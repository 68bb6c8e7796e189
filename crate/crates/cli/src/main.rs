//! `pod-sentry`: dataset tooling, evaluation, diagnosis and the HTTP service.
//!
//! Exit status: 0 success, 1 data problems found, 2 usage or configuration
//! error, 3 I/O error.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "pod-sentry", version, about = "Cocoa pod detection toolkit", propagate_version = true)]
#[command(after_help = "Exit status: 0 ok, 1 data problems found, 2 usage/config error, 3 I/O error")]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manifest validation, format conversion, splitting and statistics.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Square-crop and resize a dataset.
    #[command(subcommand)]
    Preprocess(PreprocessCmd),
    /// Score detections against ground truth.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Diagnose a single photo.
    #[command(subcommand)]
    Diagnose(DiagnoseCmd),
    /// Training-log trend reports.
    #[command(subcommand)]
    Trainlog(TrainlogCmd),
    /// Run the HTTP diagnosis service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
pub enum DatasetCmd {
    /// Check manifest integrity. Exit 1 when violations are found.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Print violations as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Convert between the manifest and YOLO / VOC label files.
    ///
    /// Export: --manifest M --to yolo|voc --out DIR.
    /// Import: --from yolo|voc --input LABEL_DIR [--images IMAGE_DIR] --out manifest.json.
    Convert(ConvertArgs),
    /// Stratified, seeded train/validation split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class counts, split sizes and steps per epoch.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Training batch size.
        #[arg(long, default_value_t = 17)]
        batch: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelFormat {
    Yolo,
    Voc,
}

#[derive(Args)]
pub struct ConvertArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    to: Option<LabelFormat>,
    #[arg(long, value_enum)]
    from: Option<LabelFormat>,
    /// Directory of label files to import.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory of images (YOLO import reads sizes from them).
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
pub enum PreprocessCmd {
    /// Crop, resize and relabel every image. Exit 1 if any image fails.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML with target_size, crop_mode, split_ratio, split_seed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Crop-rectangle sidecar (required for crop_mode = "custom-rect").
        #[arg(long)]
        crops: Option<PathBuf>,
        /// Directory image paths are relative to (default: the manifest's).
        #[arg(long)]
        source_root: Option<PathBuf>,
        /// Also reassign splits on the output manifest.
        #[arg(long)]
        split: bool,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
pub enum EvalCmd {
    /// Write an evaluation report for a detections file.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML with iou_thresholds, interpolation_points, score_floor, split.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluate every image rather than the validation split.
        #[arg(long)]
        all_splits: bool,
        /// Service store directory to publish the report into.
        #[arg(long)]
        publish: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum DiagnoseCmd {
    /// Preprocess a photo, run a backend and print the diagnosis.
    Image {
        #[arg(long)]
        image: PathBuf,
        /// file:<detections.json>, mock:<seed> or external:<url>.
        #[arg(long, default_value = "mock:0")]
        backend: String,
        /// Defaults to the file stem.
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long)]
        kb: Option<PathBuf>,
        /// TOML with score_floor and nms_iou.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = pod_sentry::DEFAULT_TARGET_SIZE)]
        target_size: u32,
        /// Write the document here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum TrainlogCmd {
    /// Series document plus trend verdicts. Exit 1 if a check fails.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plot-ready CSV export of the parsed series.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// TOML with [[expectations]] entries replacing the defaults.
        #[arg(long)]
        expectations: Option<PathBuf>,
    },
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Static UI bundle directory.
    #[arg(long)]
    ui: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    init_logging(cli.verbose);
    let result: Result<u8, CliError> = match cli.command {
        Command::Dataset(c) => commands::dataset::run(c),
        Command::Preprocess(c) => commands::preprocess::run(c),
        Command::Eval(c) => commands::eval::run(c),
        Command::Diagnose(c) => commands::diagnose::run(c),
        Command::Trainlog(c) => commands::trainlog::run(c),
        Command::Serve(a) => commands::serve::run(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
